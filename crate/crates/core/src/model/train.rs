use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    backward, batch_loss, cosine, forward, Activations, AdamConfig, AdamState, ModelParams, ModelShape, NodeInputs,
};
use crate::embeddings::{EmbeddingStore, Provenance};
use crate::error::{Error, Result};
use crate::features::NodeFeatureStore;
use crate::graph::ItemGraph;
use crate::io::write_atomic;
use crate::sampler::{
    derive_seed, select_hard_negatives, GraphSampler, NeighborhoodSpec, SamplingConfig, TrainingBatch,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dim: usize,
    /// Width of each sparse-field embedding and of the dense/pretrained projections.
    pub field_dim: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub sampling: SamplingConfig,
    pub seed: u64,
    /// Seed for the neighborhoods used when computing the final embeddings.
    pub inference_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            field_dim: 16,
            temperature: 0.07,
            adam: AdamConfig::default(),
            batch_size: 256,
            epochs: 10,
            sampling: SamplingConfig::default(),
            seed: 0,
            inference_seed: 0x1f_e7ce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.field_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("dim, field_dim and batch_size must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.sampling.n_random_neg + self.sampling.n_hard == 0 {
            return Err(Error::Config("need at least one negative per row".into()));
        }
        self.adam.validate()?;
        self.sampling.neighborhood.validate()
    }

    pub fn k_layers(&self) -> usize {
        self.sampling.neighborhood.k_layers
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Training rows in the batch.
    pub rows: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    /// Graph items in node order.
    pub items: Vec<String>,
    pub params: ModelParams,
    pub adam: AdamState,
    pub losses: Vec<LossRecord>,
    /// Seed embeddings for every training-graph node.
    pub embeddings: EmbeddingStore,
}

impl TrainedModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.hash(),
            config: self.config.clone(),
            items: self.items.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Mean loss per epoch.
    /// Mean loss per epoch, weighting each batch by its rows.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = vec![(0.0, 0); self.config.epochs];
        for r in &self.losses {
            out[r.epoch].0 += r.loss * r.rows as f64;
            out[r.epoch].1 += r.rows;
        }
        out.into_iter().filter(|e| e.1 > 0).map(|(s, n)| s / n as f64).collect()
    }
}

/// Parameters, optimizer state and the config they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: TrainConfig,
    pub items: Vec<String>,
    pub params: ModelParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            serde_json::to_writer(&mut *w, self)?;
            writeln!(w)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Consistency(format!("{}: config hash mismatch", path.display())));
        }
        if ck.items.len() + 1 != ck.params.tables.first().map_or(0, |t| t.nrows()) {
            return Err(Error::Consistency(format!("{}: item list does not match the id table", path.display())));
        }
        Ok(ck)
    }
}

/// Fills each row's hard negatives from the current outputs.
pub fn assign_hard_negatives(acts: &Activations, batch: &mut TrainingBatch, n_hard: usize) {
    let out = |v: u32| acts.output(v).expect("batch node in forward pass");
    let scores: Vec<Vec<f64>> =
        batch.targets.iter().map(|&t| batch.positives.iter().map(|&p| cosine(out(t), out(p))).collect()).collect();
    batch.hard_negatives = select_hard_negatives(&scores, &batch.targets, &batch.positives, n_hard);
}

/// Mean batch loss and its exact gradient, with the batch's hard negatives as given.
pub fn batch_gradients(
    params: &ModelParams,
    inputs: &NodeInputs,
    batch: &TrainingBatch,
    tau: f64,
) -> Result<(f64, ModelParams)> {
    let acts = forward(params, inputs, &batch.neighborhoods, &batch.roots())?;
    let bl = batch_loss(&acts, batch, tau)?;
    let grads = backward(params, inputs, &batch.neighborhoods, &acts, &bl.d_out)?;
    Ok((bl.loss, grads))
}

/// Samples a batch for `targets`, picks hard negatives with the current parameters and
/// applies one optimizer step. Returns the loss and the number of rows, or `None`
/// when no target has an out-neighbor.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    sampler: &GraphSampler,
    inputs: &NodeInputs,
    targets: &[u32],
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<Option<(f64, usize)>> {
    let mut batch = sampler.sample_batch(targets, &cfg.sampling, batch_seed);
    if batch.targets.is_empty() {
        return Ok(None);
    }
    let acts = forward(params, inputs, &batch.neighborhoods, &batch.roots())?;
    assign_hard_negatives(&acts, &mut batch, cfg.sampling.n_hard);
    let bl = batch_loss(&acts, &batch, cfg.temperature)?;
    let grads = backward(params, inputs, &batch.neighborhoods, &acts, &bl.d_out)?;
    adam.update(params, &grads, &cfg.adam)?;
    Ok(Some((bl.loss, batch.targets.len())))
}

/// Final embedding of every graph node, using neighborhoods drawn with `seed`.
pub fn seed_embeddings(
    params: &ModelParams,
    inputs: &NodeInputs,
    sampler: &GraphSampler,
    spec: &NeighborhoodSpec,
    seed: u64,
) -> Result<EmbeddingStore> {
    let g = sampler.graph();
    let nodes: Vec<u32> = (0..g.node_count() as u32).collect();
    let nbh = sampler.computation_tree(&nodes, spec, seed);
    let acts = forward(params, inputs, &nbh, &nodes)?;
    let mut store = EmbeddingStore::new(params.dim());
    for (i, &v) in acts.roots().iter().enumerate() {
        store.insert(g.item(v), acts.outputs().row(i).to_vec(), Provenance::GnnSeed)?;
    }
    Ok(store)
}

/// Trains on every node with at least one out-neighbor, reshuffled and resampled each
/// epoch, then computes the seed embeddings.
pub fn train(graph: &ItemGraph, features: &NodeFeatureStore, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if graph.node_count() == 0 {
        return Err(Error::EmptyGraph("training graph has no nodes".into()));
    }
    let inputs = NodeInputs::build(graph, features);
    let shape = ModelShape::new(&inputs, cfg.dim, cfg.field_dim, cfg.k_layers());
    let mut params = ModelParams::init(&shape, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0)));
    let mut adam = AdamState::new(&params);
    let sampler = GraphSampler::new(graph)?;
    let eligible: Vec<u32> = (0..graph.node_count() as u32).filter(|&n| graph.out_degree(n) > 0).collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData("no node has an out-neighbor".into()));
    }
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order = eligible.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64 + 1, u64::MAX)));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seed = derive_seed(cfg.seed, epoch as u64 + 1, b as u64);
            let step =
                train_step(&mut params, &mut adam, &sampler, &inputs, chunk, cfg, seed).map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, batch {b}: {m}")),
                    e => e,
                })?;
            if let Some((loss, rows)) = step {
                losses.push(LossRecord { epoch, batch: b, rows, loss });
            }
        }
        if let Some(last) = losses.last() {
            log::info!("epoch {epoch}: last batch loss {:.4}", last.loss);
        }
    }
    let embeddings = seed_embeddings(&params, &inputs, &sampler, &cfg.sampling.neighborhood, cfg.inference_seed)?;
    Ok(TrainedModel { config: cfg.clone(), items: graph.items().to_vec(), params, adam, losses, embeddings })
}
