//! Training-sample generation: positives, degree-based random negatives, in-batch
//! hard negatives and random-walk neighborhoods.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ItemGraph;

/// Exponent applied to node degree for random negatives.
pub const NEGATIVE_DEGREE_EXPONENT: f64 = 0.75;
const MAX_NEGATIVE_RETRIES: usize = 100;

/// SplitMix64 finalizer; derives independent stream seeds from a run seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-node generator, so a node's samples do not depend on visit order.
pub fn node_rng(seed: u64, node: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborhoodSpec {
    pub k_layers: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Neighbors kept per layer, by visit count.
    pub top_t: usize,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        Self { k_layers: 2, walks_per_node: 20, walk_length: 2, top_t: 10 }
    }
}

impl NeighborhoodSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_layers == 0 || self.walks_per_node == 0 || self.walk_length == 0 || self.top_t == 0 {
            return Err(Error::Config("neighborhood parameters must all be positive".into()));
        }
        if self.top_t > self.walks_per_node * self.walk_length {
            log::warn!("top_t exceeds the number of walk steps; layers will be short");
        }
        Ok(())
    }
}

/// Per-layer neighbor lists, sorted by node index, weights summing to 1 per layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledNeighborhood {
    pub layers: Vec<Vec<(u32, f64)>>,
}

impl SampledNeighborhood {
    pub fn layer(&self, l: usize) -> &[(u32, f64)] {
        self.layers.get(l - 1).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSampling {
    /// Proportional to edge weight.
    #[default]
    Weighted,
    Uniform,
}

/// Draws nodes i.i.d. with probability ∝ degree^0.75.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
    n: usize,
}

impl NegativeSampler {
    pub fn new(degrees: &[f64]) -> Result<Self> {
        let weights: Vec<f64> = degrees.iter().map(|d| d.max(0.0).powf(NEGATIVE_DEGREE_EXPONENT)).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::InsufficientData(format!("negative sampling table: {e}")))?;
        Ok(Self { dist, n: degrees.len() })
    }

    /// Weighted in-degree plus weighted out-degree of every node.
    pub fn for_graph(g: &ItemGraph) -> Result<Self> {
        let deg: Vec<f64> = (0..g.node_count() as u32).map(|n| g.in_weight(n) + g.out_weight(n)).collect();
        Self::new(&deg)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `count` draws; a draw hitting `exclude` is redrawn up to 100 times, then accepted.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R, exclude: &BTreeSet<u32>) -> Vec<u32> {
        (0..count)
            .map(|_| {
                let mut v = self.dist.sample(rng) as u32;
                for _ in 0..MAX_NEGATIVE_RETRIES {
                    if !exclude.contains(&v) {
                        break;
                    }
                    v = self.dist.sample(rng) as u32;
                }
                v
            })
            .collect()
    }
}

/// For each row, the `n_hard` highest-scoring in-batch positives other than the row's
/// own positive and target, ties by ascending node id. `scores[i][j]` is the score of
/// target `i` against positive `j`.
pub fn select_hard_negatives(scores: &[Vec<f64>], targets: &[u32], positives: &[u32], n_hard: usize) -> Vec<Vec<u32>> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if n_hard == 0 {
                return Vec::new();
            }
            let mut cands: Vec<(f64, u32)> = positives
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p != t && p != positives[i])
                .map(|(j, &p)| (scores[i][j], p))
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut out: Vec<u32> = Vec::new();
            for (_, p) in cands {
                if out.len() == n_hard {
                    break;
                }
                if !out.contains(&p) {
                    out.push(p);
                }
            }
            out
        })
        .collect()
}

/// One batch of training rows. Hard negatives are filled in after the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub targets: Vec<u32>,
    pub positives: Vec<u32>,
    /// Shared by every row.
    pub random_negatives: Vec<u32>,
    pub hard_negatives: Vec<Vec<u32>>,
    pub neighborhoods: BTreeMap<u32, SampledNeighborhood>,
    /// Targets dropped because they have no out-neighbor.
    pub excluded: Vec<u32>,
}

impl TrainingBatch {
    /// Nodes whose final embedding the loss needs.
    pub fn roots(&self) -> Vec<u32> {
        let set: BTreeSet<u32> =
            self.targets.iter().chain(&self.positives).chain(&self.random_negatives).copied().collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub neighborhood: NeighborhoodSpec,
    pub positive: PositiveSampling,
    pub n_random_neg: usize,
    pub n_hard: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            neighborhood: NeighborhoodSpec::default(),
            positive: PositiveSampling::Weighted,
            n_random_neg: 8,
            n_hard: 1,
        }
    }
}

/// Graph plus precomputed transition and negative tables.
pub struct GraphSampler<'g> {
    graph: &'g ItemGraph,
    steps: Vec<Option<WeightedIndex<f64>>>,
    negatives: NegativeSampler,
}

impl<'g> GraphSampler<'g> {
    pub fn new(graph: &'g ItemGraph) -> Result<Self> {
        let steps = (0..graph.node_count() as u32)
            .map(|n| {
                let w: Vec<f64> = graph.out_attrs(n).iter().map(|a| a.weight()).collect();
                (!w.is_empty()).then(|| WeightedIndex::new(&w).expect("edge weights are positive"))
            })
            .collect();
        Ok(Self { graph, steps, negatives: NegativeSampler::for_graph(graph)? })
    }

    pub fn graph(&self) -> &ItemGraph {
        self.graph
    }

    pub fn negatives(&self) -> &NegativeSampler {
        &self.negatives
    }

    fn step<R: Rng>(&self, node: u32, rng: &mut R) -> Option<u32> {
        let d = self.steps[node as usize].as_ref()?;
        Some(self.graph.out_neighbors(node)[d.sample(rng)])
    }

    /// Random walks along out-edges, each step chosen ∝ edge weight. A node belongs to
    /// layer ℓ if the earliest step it was reached at, over all walks, is ℓ; its
    /// importance is its visit count at that step, normalized over the kept top-t.
    pub fn sample_neighborhood<R: Rng>(&self, node: u32, spec: &NeighborhoodSpec, rng: &mut R) -> SampledNeighborhood {
        // node → (first step, visits at that step)
        let mut first: HashMap<u32, (usize, u32)> = HashMap::new();
        for _ in 0..spec.walks_per_node {
            let mut cur = node;
            for step in 1..=spec.walk_length.min(spec.k_layers) {
                let Some(next) = self.step(cur, rng) else { break };
                cur = next;
                if next == node {
                    continue;
                }
                match first.get_mut(&next) {
                    Some((s, c)) if *s == step => *c += 1,
                    Some((s, c)) if *s > step => {
                        *s = step;
                        *c = 1;
                    }
                    Some(_) => {}
                    None => {
                        first.insert(next, (step, 1));
                    }
                }
            }
            // Remaining steps only matter for walks longer than the layer count.
            for _ in spec.k_layers..spec.walk_length {
                match self.step(cur, rng) {
                    Some(n) => cur = n,
                    None => break,
                }
            }
        }
        let mut layers = vec![Vec::new(); spec.k_layers];
        for (n, (s, c)) in first {
            layers[s - 1].push((n, c));
        }
        SampledNeighborhood {
            layers: layers
                .into_iter()
                .map(|mut l| {
                    l.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                    l.truncate(spec.top_t);
                    let total: u32 = l.iter().map(|x| x.1).sum();
                    let mut out: Vec<(u32, f64)> = l.into_iter().map(|(n, c)| (n, c as f64 / total as f64)).collect();
                    out.sort_by_key(|x| x.0);
                    out
                })
                .collect(),
        }
    }

    /// A direct out-neighbor of `target`, or `None` when it has none.
    pub fn sample_positive<R: Rng>(&self, target: u32, mode: PositiveSampling, rng: &mut R) -> Option<u32> {
        let nb = self.graph.out_neighbors(target);
        if nb.is_empty() {
            return None;
        }
        match mode {
            PositiveSampling::Weighted => self.step(target, rng),
            PositiveSampling::Uniform => Some(nb[rng.gen_range(0..nb.len())]),
        }
    }

    /// Neighborhoods for every node in the computation tree of `roots`: the roots, their
    /// layer-1 neighbors, and so on for `k_layers` levels (the deepest level needs none).
    pub fn computation_tree(
        &self,
        roots: &[u32],
        spec: &NeighborhoodSpec,
        seed: u64,
    ) -> BTreeMap<u32, SampledNeighborhood> {
        let mut out: BTreeMap<u32, SampledNeighborhood> = BTreeMap::new();
        let mut frontier: BTreeSet<u32> = roots.iter().copied().collect();
        for _ in 0..spec.k_layers {
            let mut next = BTreeSet::new();
            for &n in &frontier {
                let nb = out.entry(n).or_insert_with(|| self.sample_neighborhood(n, spec, &mut node_rng(seed, n)));
                next.extend(nb.layer(1).iter().map(|x| x.0));
            }
            frontier = next.into_iter().filter(|n| !out.contains_key(n)).collect();
        }
        out
    }

    /// Positives, shared random negatives and neighborhoods for one batch.
    pub fn sample_batch(&self, targets: &[u32], cfg: &SamplingConfig, seed: u64) -> TrainingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
        let mut kept = Vec::with_capacity(targets.len());
        let mut positives = Vec::with_capacity(targets.len());
        let mut excluded = Vec::new();
        for &t in targets {
            match self.sample_positive(t, cfg.positive, &mut rng) {
                Some(p) => {
                    kept.push(t);
                    positives.push(p);
                }
                None => excluded.push(t),
            }
        }
        let exclude: BTreeSet<u32> = kept.iter().chain(&positives).copied().collect();
        let random_negatives = self.negatives.sample(cfg.n_random_neg, &mut rng, &exclude);
        let mut batch = TrainingBatch {
            targets: kept,
            positives,
            random_negatives,
            hard_negatives: Vec::new(),
            neighborhoods: BTreeMap::new(),
            excluded,
        };
        batch.neighborhoods = self.computation_tree(&batch.roots(), &cfg.neighborhood, derive_seed(seed, 2, 0));
        batch
    }
}
