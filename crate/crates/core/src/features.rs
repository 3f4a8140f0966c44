//! Per-item content features: sparse categorical ids, dense numerics and optional
//! pretrained vectors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{open_lines, write_atomic};

/// Token → contiguous index, in first-seen order. Index 0 is reserved for unknown tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary::default();
        for t in tokens {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub const UNKNOWN: u32 = 0;

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        let i = self.tokens.len() as u32;
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i as usize)).map(String::as_str)
    }

    /// Number of embedding rows needed, counting the reserved unknown row.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Sparse,
    Dense,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub sparse: Vec<String>,
    pub dense: Vec<String>,
    pub pretrained: bool,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            sparse: vec!["category".into(), "brand".into(), "shop".into()],
            dense: vec!["price".into(), "rating".into()],
            pretrained: true,
        }
    }
}

impl FeatureSchema {
    fn header(&self) -> String {
        let mut cols = vec!["item".to_string()];
        cols.extend(self.sparse.iter().map(|s| format!("{s}:sparse")));
        cols.extend(self.dense.iter().map(|s| format!("{s}:dense")));
        if self.pretrained {
            cols.push("pretrained:pretrained".into());
        }
        cols.join("\t")
    }
}

/// One raw feature row, values in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub item: String,
    pub sparse: Vec<String>,
    pub dense: Vec<f64>,
    pub pretrained: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseStats {
    pub mean: f64,
    pub std: f64,
    pub log1p: bool,
}

/// Category paths like `home/kitchen/knives` are reduced to their leaf.
pub fn category_leaf(path: &str) -> &str {
    path.rsplit(['/', '>']).next().unwrap_or(path).trim()
}

#[derive(Debug, Clone)]
pub struct NodeFeatureStore {
    schema: FeatureSchema,
    items: Vec<String>,
    index: HashMap<String, usize>,
    vocabs: Vec<Vocabulary>,
    sparse: Vec<Vec<u32>>,
    dense_raw: Vec<Vec<f64>>,
    dense: Vec<Vec<f64>>,
    dense_stats: Vec<DenseStats>,
    pretrained_dim: usize,
    pretrained: Vec<Option<Vec<f64>>>,
    /// Rows dropped at load because a dense value was not a finite number.
    pub skipped_rows: usize,
}

impl NodeFeatureStore {
    pub fn from_rows(schema: FeatureSchema, rows: Vec<FeatureRow>) -> Result<Self> {
        let mut vocabs = vec![Vocabulary::default(); schema.sparse.len()];
        let mut store = NodeFeatureStore {
            items: Vec::with_capacity(rows.len()),
            index: HashMap::with_capacity(rows.len()),
            vocabs: Vec::new(),
            sparse: Vec::with_capacity(rows.len()),
            dense_raw: Vec::with_capacity(rows.len()),
            dense: Vec::new(),
            dense_stats: Vec::new(),
            pretrained_dim: 0,
            pretrained: Vec::with_capacity(rows.len()),
            skipped_rows: 0,
            schema,
        };
        let category_col = store.schema.sparse.iter().position(|s| s == "category");
        for row in rows {
            if row.sparse.len() != store.schema.sparse.len() || row.dense.len() != store.schema.dense.len() {
                return Err(Error::Format(format!("feature row for {} does not match schema", row.item)));
            }
            if row.dense.iter().any(|v| !v.is_finite()) {
                store.skipped_rows += 1;
                continue;
            }
            if store.index.contains_key(&row.item) {
                return Err(Error::Format(format!("duplicate feature row for item {}", row.item)));
            }
            if let Some(p) = &row.pretrained {
                if store.pretrained_dim == 0 {
                    store.pretrained_dim = p.len();
                } else if p.len() != store.pretrained_dim {
                    return Err(Error::Format(format!(
                        "pretrained vector of {} has dimension {}, expected {}",
                        row.item,
                        p.len(),
                        store.pretrained_dim
                    )));
                }
            }
            let ids = row
                .sparse
                .iter()
                .enumerate()
                .map(|(f, tok)| {
                    let tok = if Some(f) == category_col { category_leaf(tok) } else { tok.as_str() };
                    vocabs[f].insert(tok)
                })
                .collect();
            store.index.insert(row.item.clone(), store.items.len());
            store.items.push(row.item);
            store.sparse.push(ids);
            store.dense_raw.push(row.dense);
            store.pretrained.push(row.pretrained);
        }
        store.vocabs = vocabs;
        store.standardize();
        Ok(store)
    }

    fn standardize(&mut self) {
        let n = self.items.len().max(1) as f64;
        self.dense_stats = self
            .schema
            .dense
            .iter()
            .enumerate()
            .map(|(f, name)| {
                let log1p = name == "price";
                let vals = self.dense_raw.iter().map(|r| transform(r[f], log1p));
                let mean = vals.clone().sum::<f64>() / n;
                let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                DenseStats { mean, std, log1p }
            })
            .collect();
        self.dense = self
            .dense_raw
            .iter()
            .map(|r| r.iter().zip(&self.dense_stats).map(|(&v, s)| (transform(v, s.log1p) - s.mean) / s.std).collect())
            .collect();
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn row(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn vocab(&self, field: usize) -> &Vocabulary {
        &self.vocabs[field]
    }

    pub fn vocabs(&self) -> &[Vocabulary] {
        &self.vocabs
    }

    pub fn sparse(&self, row: usize) -> &[u32] {
        &self.sparse[row]
    }

    /// Transformed and standardized dense values.
    pub fn dense(&self, row: usize) -> &[f64] {
        &self.dense[row]
    }

    pub fn dense_raw(&self, row: usize) -> &[f64] {
        &self.dense_raw[row]
    }

    pub fn dense_stats(&self) -> &[DenseStats] {
        &self.dense_stats
    }

    pub fn pretrained_dim(&self) -> usize {
        self.pretrained_dim
    }

    pub fn pretrained(&self, row: usize) -> Option<&[f64]> {
        self.pretrained[row].as_deref()
    }

    /// Looks up `token` in sparse field `field` the way a new item would be encoded.
    pub fn encode(&self, field: usize, token: &str) -> u32 {
        let is_category = self.schema.sparse.get(field).is_some_and(|s| s == "category");
        self.vocabs[field].get(if is_category { category_leaf(token) } else { token })
    }

    /// Content matching key for an item at coarseness `level` (0 finest, 2 coarsest).
    pub fn content_key(&self, row: usize, level: u8) -> ContentKey {
        let field = |name: &str| self.schema.sparse.iter().position(|s| s == name);
        let category = field("category").map_or(Vocabulary::UNKNOWN, |f| self.sparse[row][f]);
        let brand = field("brand").map(|f| self.sparse[row][f]);
        let price = self.schema.dense.iter().position(|s| s == "price").map(|f| self.dense_raw[row][f]);
        match level {
            0 => ContentKey { category, brand, price_band: price.map(price_band) },
            1 => ContentKey { category, brand, price_band: None },
            _ => ContentKey { category, brand: None, price_band: None },
        }
    }
}

fn transform(v: f64, log1p: bool) -> f64 {
    if log1p {
        v.max(0.0).ln_1p()
    } else {
        v
    }
}

/// Half-decade price band: `floor(2 * log10(max(price, 0.01)))`.
pub fn price_band(price: f64) -> i64 {
    (price.max(0.01).log10() * 2.0).floor() as i64
}

/// Key used to find seed items with similar content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentKey {
    pub category: u32,
    pub brand: Option<u32>,
    pub price_band: Option<i64>,
}

pub const CONTENT_LEVELS: u8 = 3;

fn parse_kind(col: &str) -> Result<(String, ColumnKind)> {
    let (name, kind) = match col.split_once(':') {
        Some((n, k)) => (n.trim(), Some(k.trim())),
        None => (col.trim(), None),
    };
    let kind = match kind {
        Some("sparse") => ColumnKind::Sparse,
        Some("dense") => ColumnKind::Dense,
        Some("pretrained") => ColumnKind::Pretrained,
        Some(other) => return Err(Error::Format(format!("unknown column kind {other:?}"))),
        None => match name {
            "price" | "rating" => ColumnKind::Dense,
            "pretrained" | "pretrained_csv" => ColumnKind::Pretrained,
            _ => ColumnKind::Sparse,
        },
    };
    Ok((name.to_string(), kind))
}

/// Loads a feature TSV whose header names every column, optionally as `name:kind`.
pub fn load_features(path: &Path) -> Result<NodeFeatureStore> {
    let mut lines = open_lines(path)?;
    let header =
        lines.next().transpose()?.ok_or_else(|| Error::Format(format!("{}: empty feature file", path.display())))?;
    let mut cols = header.split('\t');
    cols.next();
    let kinds = cols.map(parse_kind).collect::<Result<Vec<_>>>()?;
    let mut schema = FeatureSchema { sparse: vec![], dense: vec![], pretrained: false };
    for (name, kind) in &kinds {
        match kind {
            ColumnKind::Sparse => schema.sparse.push(name.clone()),
            ColumnKind::Dense => schema.dense.push(name.clone()),
            ColumnKind::Pretrained if !schema.pretrained => schema.pretrained = true,
            ColumnKind::Pretrained => return Err(Error::Format("more than one pretrained column".into())),
        }
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split('\t').collect();
        let item = vals[0].trim();
        if item.is_empty() {
            skipped += 1;
            continue;
        }
        let mut row = FeatureRow { item: item.into(), sparse: vec![], dense: vec![], pretrained: None };
        let mut ok = true;
        for (j, (_, kind)) in kinds.iter().enumerate() {
            let v = vals.get(j + 1).map_or("", |s| s.trim());
            match kind {
                ColumnKind::Sparse => row.sparse.push(v.to_string()),
                ColumnKind::Dense => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => row.dense.push(x),
                    _ => ok = false,
                },
                ColumnKind::Pretrained if v.is_empty() => {}
                ColumnKind::Pretrained => {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        v.split(',').map(|x| x.trim().parse::<f64>()).collect();
                    match parsed {
                        Ok(p) => row.pretrained = Some(p),
                        Err(_) => ok = false,
                    }
                }
            }
        }
        if ok {
            rows.push(row);
        } else {
            skipped += 1;
        }
    }
    let mut store = NodeFeatureStore::from_rows(schema, rows)?;
    store.skipped_rows += skipped;
    if store.skipped_rows > 0 {
        log::warn!("{}: skipped {} feature rows", path.display(), store.skipped_rows);
    }
    Ok(store)
}

pub fn write_features(path: &Path, schema: &FeatureSchema, rows: &[FeatureRow]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{}", schema.header())?;
        for r in rows {
            write!(w, "{}", r.item)?;
            for s in &r.sparse {
                write!(w, "\t{s}")?;
            }
            for d in &r.dense {
                write!(w, "\t{d}")?;
            }
            if schema.pretrained {
                let p = r
                    .pretrained
                    .as_ref()
                    .map_or(String::new(), |p| p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
                write!(w, "\t{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}
