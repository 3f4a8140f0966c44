//! Embeddings for items the model never trained on.
//!
//! Every item ends up with exactly one vector, chosen by precedence: a trained seed
//! keeps its own; an item with seed neighbors in the inference graph gets their
//! edge-weighted mean; anything else gets the mean of seeds with matching content,
//! relaxing the match from (category, brand, price band) to (category, brand) to
//! category, and finally the mean of all seeds.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingStore, Provenance};
use crate::error::{Error, Result};
use crate::features::{ContentKey, NodeFeatureStore, CONTENT_LEVELS};
use crate::graph::ItemGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    /// Matches needed at a content level before it is used.
    pub min_seeds: usize,
    pub use_graph: bool,
    pub use_content: bool,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self { min_seeds: 3, use_graph: true, use_content: true }
    }
}

/// Seed items grouped by content key at every level, plus the mean of all seeds.
#[derive(Debug, Clone)]
pub struct SeedIndex {
    levels: Vec<HashMap<ContentKey, Vec<String>>>,
    global_mean: Vec<f64>,
}

impl SeedIndex {
    /// Indexes the gnn-seed entries of `seeds` that have features.
    pub fn build(seeds: &EmbeddingStore, features: &NodeFeatureStore) -> Result<Self> {
        let mut levels = vec![HashMap::<ContentKey, Vec<String>>::new(); CONTENT_LEVELS as usize];
        let mut sum = vec![0.0; seeds.dim()];
        let mut n = 0usize;
        for (item, e) in seeds.iter().filter(|(_, e)| e.provenance == Provenance::GnnSeed) {
            for (s, v) in sum.iter_mut().zip(&e.vector) {
                *s += v;
            }
            n += 1;
            if let Some(row) = features.row(item) {
                for (level, map) in levels.iter_mut().enumerate() {
                    map.entry(features.content_key(row, level as u8)).or_default().push(item.to_string());
                }
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData("no seed embeddings to populate from".into()));
        }
        Ok(Self { levels, global_mean: sum.into_iter().map(|s| s / n as f64).collect() })
    }

    /// Seeds sharing `key` at `level`, in item-id order.
    pub fn matches(&self, level: u8, key: &ContentKey) -> &[String] {
        self.levels[level as usize].get(key).map_or(&[], Vec::as_slice)
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }
}

fn mean<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    sum.into_iter().map(|s| s / n as f64).collect()
}

/// Edge-weighted mean of the seed embeddings among `item`'s in- and out-neighbors in
/// `g`, with both directions' weights summed. `None` when no neighbor is a seed.
pub fn populate_by_graph(g: &ItemGraph, seeds: &EmbeddingStore, item: &str) -> Option<Vec<f64>> {
    let node = g.node(item)?;
    let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
    for (n, a) in g.out_neighbors(node).iter().zip(g.out_attrs(node)) {
        *weights.entry(*n).or_insert(0.0) += a.weight();
    }
    let (ins, in_w) = g.in_neighbors(node);
    for (n, w) in ins.iter().zip(in_w) {
        *weights.entry(*n).or_insert(0.0) += w;
    }
    let mut sum = vec![0.0; seeds.dim()];
    let mut total = 0.0;
    for (n, w) in weights {
        match seeds.get(g.item(n)) {
            Some(e) if e.provenance == Provenance::GnnSeed => {
                for (s, x) in sum.iter_mut().zip(&e.vector) {
                    *s += w * x;
                }
                total += w;
            }
            _ => {}
        }
    }
    (total > 0.0).then(|| sum.into_iter().map(|s| s / total).collect())
}

/// Mean seed embedding at the finest content level with at least `min_seeds` matches,
/// falling back to the global seed mean. Returns the level used, if any.
pub fn populate_by_content(
    features: &NodeFeatureStore,
    row: usize,
    index: &SeedIndex,
    seeds: &EmbeddingStore,
    min_seeds: usize,
) -> (Vec<f64>, Option<u8>) {
    for level in 0..CONTENT_LEVELS {
        let m = index.matches(level, &features.content_key(row, level));
        if !m.is_empty() && m.len() >= min_seeds {
            let vectors = m.iter().map(|i| seeds.vector(i).expect("indexed seed"));
            return (mean(vectors, seeds.dim()), Some(level));
        }
    }
    (index.global_mean().to_vec(), None)
}

/// One embedding per seed and per feature-store item, by precedence seed → inference
/// graph → content. Seeds are copied verbatim.
pub fn resolve_all(
    seeds: &EmbeddingStore,
    inference_graph: Option<&ItemGraph>,
    features: &NodeFeatureStore,
    cfg: &TailConfig,
) -> Result<EmbeddingStore> {
    let index = SeedIndex::build(seeds, features)?;
    let mut out = seeds.filtered(&[Provenance::GnnSeed]);
    for (row, item) in features.items().iter().enumerate() {
        if out.contains(item) {
            continue;
        }
        if cfg.use_graph {
            if let Some(v) = inference_graph.and_then(|g| populate_by_graph(g, seeds, item)) {
                out.insert(item.clone(), v, Provenance::GraphPopulated)?;
                continue;
            }
        }
        if cfg.use_content {
            let (v, _) = populate_by_content(features, row, &index, seeds, cfg.min_seeds);
            out.insert(item.clone(), v, Provenance::ContentPopulated)?;
        }
    }
    Ok(out)
}
