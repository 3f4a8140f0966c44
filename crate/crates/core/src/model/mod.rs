//! Linear neighbor-averaging graph network.
//!
//! Content features are projected to a layer-0 embedding `h⁰ = W0 · x`, where `x`
//! concatenates one embedding lookup per sparse field (the item id first), a
//! projection of the dense features and a projection of the pretrained vector. Each of
//! the `k` blocks then computes `hˡ = Wˡ · [hˡ⁻¹(v) ; Σ w·hˡ⁻¹(n)]` over the node's
//! sampled layer-1 neighbors. There is no nonlinearity anywhere, so every gradient
//! below is a handful of matrix products.

mod adam;
mod forward;
mod loss;
mod train;

use ndarray::{Array2, ArrayView1};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NodeFeatureStore;
use crate::graph::ItemGraph;

pub use adam::{AdamConfig, AdamState};
pub use forward::{backward, forward, gnn_block, project, Activations};
pub use loss::{batch_loss, cosine, softmax_loss, zero_norm_count, BatchLoss};
pub use train::{
    assign_hard_negatives, batch_gradients, seed_embeddings, train, train_step, Checkpoint, LossRecord, TrainConfig,
    TrainedModel,
};

/// Per-node model inputs, indexed by graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInputs {
    /// Row per node: item-id index followed by one index per sparse feature field.
    pub sparse: Vec<Vec<u32>>,
    pub dense: Array2<f64>,
    /// Zero rows for nodes without a pretrained vector.
    pub pretrained: Array2<f64>,
    /// Row count of each embedding table, item-id table first.
    pub table_rows: Vec<usize>,
}

impl NodeInputs {
    /// Inputs for every node of `graph`. The item-id index of node `n` is `n + 1`;
    /// nodes absent from `features` get unknown sparse ids and zero dense inputs.
    pub fn build(graph: &ItemGraph, features: &NodeFeatureStore) -> Self {
        let n = graph.node_count();
        let n_dense = features.schema().dense.len();
        let p = features.pretrained_dim();
        let mut sparse = Vec::with_capacity(n);
        let mut dense = Array2::zeros((n, n_dense));
        let mut pretrained = Array2::zeros((n, p));
        for node in 0..n {
            let mut ids = vec![node as u32 + 1];
            match features.row(graph.item(node as u32)) {
                Some(r) => {
                    ids.extend_from_slice(features.sparse(r));
                    dense.row_mut(node).assign(&ArrayView1::from(features.dense(r)));
                    if let Some(v) = features.pretrained(r) {
                        pretrained.row_mut(node).assign(&ArrayView1::from(v));
                    }
                }
                None => ids.extend(std::iter::repeat_n(0, features.vocabs().len())),
            }
            sparse.push(ids);
        }
        let mut table_rows = vec![n + 1];
        table_rows.extend(features.vocabs().iter().map(|v| v.rows()));
        Self { sparse, dense, pretrained, table_rows }
    }

    pub fn len(&self) -> usize {
        self.sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty()
    }
}

/// Tensor shapes of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dim: usize,
    pub field_dim: usize,
    pub table_rows: Vec<usize>,
    pub n_dense: usize,
    pub pretrained_dim: usize,
    pub k_layers: usize,
}

impl ModelShape {
    pub fn new(inputs: &NodeInputs, dim: usize, field_dim: usize, k_layers: usize) -> Self {
        Self {
            dim,
            field_dim,
            table_rows: inputs.table_rows.clone(),
            n_dense: inputs.dense.ncols(),
            pretrained_dim: inputs.pretrained.ncols(),
            k_layers,
        }
    }

    /// Width of the concatenated projection input: one slot per table, one for the
    /// dense projection, one for the pretrained projection.
    pub fn concat_width(&self) -> usize {
        (self.table_rows.len() + 2) * self.field_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `rows × field_dim`, item-id table first.
    pub tables: Vec<Array2<f64>>,
    /// `field_dim × n_dense`.
    pub dense_proj: Array2<f64>,
    /// `field_dim × pretrained_dim`.
    pub pretrained_proj: Array2<f64>,
    /// `dim × concat_width`.
    pub w0: Array2<f64>,
    /// `dim × 2·dim` per block.
    pub layers: Vec<Array2<f64>>,
}

impl ModelParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        let fd = shape.field_dim;
        Self {
            tables: shape.table_rows.iter().map(|&r| Array2::zeros((r, fd))).collect(),
            dense_proj: Array2::zeros((fd, shape.n_dense)),
            pretrained_proj: Array2::zeros((fd, shape.pretrained_dim)),
            w0: Array2::zeros((shape.dim, shape.concat_width())),
            layers: (0..shape.k_layers).map(|_| Array2::zeros((shape.dim, 2 * shape.dim))).collect(),
        }
    }

    /// Uniform initialization scaled to keep activations near unit norm: table entries
    /// with variance `1/field_dim`, matrices Glorot-uniform.
    pub fn init<R: Rng>(shape: &ModelShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let table_bound = (3.0 / shape.field_dim as f64).sqrt();
        for t in &mut p.tables {
            fill_uniform(t, table_bound, rng);
        }
        for m in p.matrices_mut() {
            let bound = (6.0 / (m.nrows() + m.ncols()).max(1) as f64).sqrt();
            fill_uniform(m, bound, rng);
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            dim: self.w0.nrows(),
            field_dim: self.dense_proj.nrows(),
            table_rows: self.tables.iter().map(|t| t.nrows()).collect(),
            n_dense: self.dense_proj.ncols(),
            pretrained_dim: self.pretrained_proj.ncols(),
            k_layers: self.layers.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w0.nrows()
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        [&mut self.dense_proj, &mut self.pretrained_proj, &mut self.w0].into_iter().chain(self.layers.iter_mut())
    }

    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = self.tables.iter().collect();
        v.extend([&self.dense_proj, &self.pretrained_proj, &self.w0]);
        v.extend(self.layers.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = self.tables.iter_mut().collect();
        v.extend([&mut self.dense_proj, &mut self.pretrained_proj, &mut self.w0]);
        v.extend(self.layers.iter_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Errors unless the parameter shapes accept `inputs`.
    pub fn check_inputs(&self, inputs: &NodeInputs) -> Result<()> {
        let shape = self.shape();
        let ok = shape.table_rows.len() == inputs.table_rows.len()
            && shape.n_dense == inputs.dense.ncols()
            && shape.pretrained_dim == inputs.pretrained.ncols()
            && inputs.sparse.iter().all(|ids| {
                ids.len() == shape.table_rows.len()
                    && ids.iter().zip(&shape.table_rows).all(|(&i, &r)| (i as usize) < r)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config("model parameters do not match the node inputs".into()))
        }
    }
}

fn fill_uniform<R: Rng>(m: &mut Array2<f64>, bound: f64, rng: &mut R) {
    if bound > 0.0 && !m.is_empty() {
        let u = Uniform::new_inclusive(-bound, bound);
        m.mapv_inplace(|_| u.sample(rng));
    }
}
