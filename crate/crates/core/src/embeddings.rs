//! Final per-item embeddings and their on-disk format.
//!
//! File layout: a header line `count \t dimension \t encoding`, then one row per item,
//! `item \t provenance \t vector`. With `csv` encoding the vector is comma-separated
//! decimals printed in shortest round-trip form; with `base64` it is the little-endian
//! f32 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{open_lines, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "gnn-seed")]
    GnnSeed,
    #[serde(rename = "graph-populated")]
    GraphPopulated,
    #[serde(rename = "content-populated")]
    ContentPopulated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GnnSeed => "gnn-seed",
            Provenance::GraphPopulated => "graph-populated",
            Provenance::ContentPopulated => "content-populated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gnn-seed" => Some(Provenance::GnnSeed),
            "graph-populated" => Some(Provenance::GraphPopulated),
            "content-populated" => Some(Provenance::ContentPopulated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VectorEncoding {
    #[default]
    Csv,
    Base64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

/// Item → embedding, iterated in item-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, Embedding>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, item: impl Into<String>, vector: Vec<f64>, provenance: Provenance) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Consistency(format!(
                "embedding of dimension {} inserted into store of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency("non-finite embedding".into()));
        }
        self.entries.insert(item.into(), Embedding { vector, provenance });
        Ok(())
    }

    pub fn get(&self, item: &str) -> Option<&Embedding> {
        self.entries.get(item)
    }

    pub fn vector(&self, item: &str) -> Option<&[f64]> {
        self.entries.get(item).map(|e| e.vector.as_slice())
    }

    pub fn contains(&self, item: &str) -> bool {
        self.entries.contains_key(item)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of entries per provenance.
    pub fn provenance_histogram(&self) -> BTreeMap<Provenance, usize> {
        let mut h = BTreeMap::new();
        for e in self.entries.values() {
            *h.entry(e.provenance).or_insert(0) += 1;
        }
        h
    }

    /// Entries whose provenance is in `keep`.
    pub fn filtered(&self, keep: &[Provenance]) -> EmbeddingStore {
        EmbeddingStore {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .filter(|(_, e)| keep.contains(&e.provenance))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn write(&self, path: &Path, encoding: VectorEncoding) -> Result<()> {
        write_atomic(path, |w| {
            let tag = match encoding {
                VectorEncoding::Csv => "csv",
                VectorEncoding::Base64 => "base64",
            };
            writeln!(w, "{}\t{}\t{tag}", self.len(), self.dim)?;
            for (item, e) in &self.entries {
                let v = match encoding {
                    VectorEncoding::Csv => e.vector.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    VectorEncoding::Base64 => {
                        let bytes: Vec<u8> = e.vector.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
                        base64::engine::general_purpose::STANDARD.encode(bytes)
                    }
                };
                writeln!(w, "{item}\t{}\t{v}", e.provenance.as_str())?;
            }
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
        let mut lines = open_lines(path)?;
        let header = lines.next().transpose()?.ok_or_else(|| bad("empty embedding file".into()))?;
        let h: Vec<&str> = header.split('\t').collect();
        let (count, dim) =
            match (h.first().and_then(|c| c.parse::<usize>().ok()), h.get(1).and_then(|c| c.parse::<usize>().ok())) {
                (Some(c), Some(d)) => (c, d),
                _ => return Err(bad(format!("bad header {header:?}"))),
            };
        let encoding = match h.get(2).copied().unwrap_or("csv") {
            "csv" => VectorEncoding::Csv,
            "base64" => VectorEncoding::Base64,
            other => return Err(bad(format!("unknown encoding {other:?}"))),
        };
        let mut store = EmbeddingStore::new(dim);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("malformed row {line:?}")));
            }
            let provenance =
                Provenance::parse(cols[1]).ok_or_else(|| bad(format!("unknown provenance {:?}", cols[1])))?;
            let vector: Vec<f64> = match encoding {
                VectorEncoding::Csv => cols[2]
                    .split(',')
                    .map(|x| x.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("bad vector for {}", cols[0])))?,
                VectorEncoding::Base64 => {
                    let bytes = base64::engine::general_purpose::STANDARD
                        .decode(cols[2])
                        .map_err(|_| bad(format!("bad base64 for {}", cols[0])))?;
                    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
                }
            };
            store.insert(cols[0], vector, provenance)?;
        }
        if store.len() != count {
            return Err(bad(format!("header declares {count} rows, found {}", store.len())));
        }
        Ok(store)
    }
}
