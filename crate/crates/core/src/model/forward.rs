use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1, Axis};

use super::{ModelParams, NodeInputs};
use crate::error::{Error, Result};
use crate::sampler::SampledNeighborhood;

/// Cached forward pass over a computation tree.
///
/// `levels[ℓ]` holds, in ascending order, the nodes whose layer-ℓ embedding is needed;
/// `levels[k]` are the roots and `levels[ℓ-1]` adds the layer-1 neighbors of `levels[ℓ]`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub levels: Vec<Vec<u32>>,
    /// Projection input rows for `levels[0]`.
    pub x: Array2<f64>,
    /// `h[ℓ]` rows align with `levels[ℓ]`.
    pub h: Vec<Array2<f64>>,
    /// `c[ℓ-1]` is the `[center ; aggregate]` input of block ℓ, rows aligned with `levels[ℓ]`.
    pub c: Vec<Array2<f64>>,
}

impl Activations {
    pub fn k(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn roots(&self) -> &[u32] {
        &self.levels[self.k()]
    }

    fn index(&self, level: usize, node: u32) -> Option<usize> {
        self.levels[level].binary_search(&node).ok()
    }

    /// Final embedding of a root.
    pub fn output(&self, node: u32) -> Option<ArrayView1<'_, f64>> {
        let i = self.index(self.k(), node)?;
        Some(self.h[self.k()].row(i))
    }

    pub fn output_row(&self, node: u32) -> Option<usize> {
        self.index(self.k(), node)
    }

    pub fn outputs(&self) -> &Array2<f64> {
        &self.h[self.k()]
    }
}

fn neighbors(nbh: &BTreeMap<u32, SampledNeighborhood>, node: u32) -> Result<&[(u32, f64)]> {
    nbh.get(&node)
        .map(|n| n.layer(1))
        .ok_or_else(|| Error::Consistency(format!("node {node} has no sampled neighborhood")))
}

fn project_into(params: &ModelParams, inputs: &NodeInputs, node: u32, mut x: ArrayViewMut1<f64>) {
    let fd = params.dense_proj.nrows();
    let n = node as usize;
    for (f, &id) in inputs.sparse[n].iter().enumerate() {
        x.slice_mut(s![f * fd..(f + 1) * fd]).assign(&params.tables[f].row(id as usize));
    }
    let t = params.tables.len();
    x.slice_mut(s![t * fd..(t + 1) * fd]).assign(&params.dense_proj.dot(&inputs.dense.row(n)));
    x.slice_mut(s![(t + 1) * fd..(t + 2) * fd]).assign(&params.pretrained_proj.dot(&inputs.pretrained.row(n)));
}

/// Layer-0 embedding of one node: `W0 · concat(lookups, dense projection, pretrained projection)`.
pub fn project(params: &ModelParams, inputs: &NodeInputs, node: u32) -> Array1<f64> {
    let mut x = Array1::zeros(params.w0.ncols());
    project_into(params, inputs, node, x.view_mut());
    params.w0.dot(&x)
}

/// One block: `w · [center ; Σ weight·neighbor]`, summing neighbors in ascending id
/// order. An empty list aggregates to zero.
pub fn gnn_block(center: ArrayView1<f64>, neighbors: &[(u32, ArrayView1<f64>, f64)], w: &Array2<f64>) -> Array1<f64> {
    let d = center.len();
    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by_key(|&i| neighbors[i].0);
    let mut c = Array1::zeros(2 * d);
    c.slice_mut(s![..d]).assign(&center);
    let mut agg = c.slice_mut(s![d..]);
    for i in order {
        agg.scaled_add(neighbors[i].2, &neighbors[i].1);
    }
    w.dot(&c)
}

/// Forward pass for `roots` using each node's sampled layer-1 neighbors at every depth.
pub fn forward(
    params: &ModelParams,
    inputs: &NodeInputs,
    neighborhoods: &BTreeMap<u32, SampledNeighborhood>,
    roots: &[u32],
) -> Result<Activations> {
    let k = params.layers.len();
    let d = params.dim();
    let mut levels: Vec<Vec<u32>> = vec![Vec::new(); k + 1];
    let mut set: BTreeSet<u32> = roots.iter().copied().collect();
    levels[k] = set.iter().copied().collect();
    for l in (1..=k).rev() {
        for &v in &levels[l] {
            set.extend(neighbors(neighborhoods, v)?.iter().map(|x| x.0));
        }
        levels[l - 1] = set.iter().copied().collect();
    }
    if let Some(&bad) = levels[0].iter().find(|&&v| v as usize >= inputs.len()) {
        return Err(Error::Consistency(format!("node {bad} has no inputs")));
    }

    let mut x = Array2::zeros((levels[0].len(), params.w0.ncols()));
    for (i, &v) in levels[0].iter().enumerate() {
        project_into(params, inputs, v, x.row_mut(i));
    }
    let mut h = vec![x.dot(&params.w0.t())];
    let mut c = Vec::with_capacity(k);
    for l in 1..=k {
        let prev = &h[l - 1];
        let idx = |v: u32| levels[l - 1].binary_search(&v).expect("level closure");
        let mut cl = Array2::zeros((levels[l].len(), 2 * d));
        for (i, &v) in levels[l].iter().enumerate() {
            let mut row = cl.row_mut(i);
            row.slice_mut(s![..d]).assign(&prev.row(idx(v)));
            let mut agg = row.slice_mut(s![d..]);
            for &(n, w) in neighbors(neighborhoods, v)? {
                agg.scaled_add(w, &prev.row(idx(n)));
            }
        }
        h.push(cl.dot(&params.layers[l - 1].t()));
        c.push(cl);
    }
    Ok(Activations { levels, x, h, c })
}

/// Gradients of a scalar loss with respect to every parameter, given its gradient
/// `d_out` with respect to the root outputs (rows aligned with `acts.roots()`).
pub fn backward(
    params: &ModelParams,
    inputs: &NodeInputs,
    neighborhoods: &BTreeMap<u32, SampledNeighborhood>,
    acts: &Activations,
    d_out: &Array2<f64>,
) -> Result<ModelParams> {
    let k = acts.k();
    let d = params.dim();
    let mut grads = ModelParams::zeros(&params.shape());
    let mut g = d_out.clone();
    for l in (1..=k).rev() {
        grads.layers[l - 1] = g.t().dot(&acts.c[l - 1]);
        let dc = g.dot(&params.layers[l - 1]);
        let mut prev = Array2::zeros((acts.levels[l - 1].len(), d));
        let idx = |v: u32| acts.levels[l - 1].binary_search(&v).expect("level closure");
        for (i, &v) in acts.levels[l].iter().enumerate() {
            let row = dc.row(i);
            prev.row_mut(idx(v)).scaled_add(1.0, &row.slice(s![..d]));
            let dagg = row.slice(s![d..]);
            for &(n, w) in neighbors(neighborhoods, v)? {
                prev.row_mut(idx(n)).scaled_add(w, &dagg);
            }
        }
        g = prev;
    }
    grads.w0 = g.t().dot(&acts.x);
    let dx = g.dot(&params.w0);
    let fd = params.dense_proj.nrows();
    let t = params.tables.len();
    for (i, &v) in acts.levels[0].iter().enumerate() {
        for (f, &id) in inputs.sparse[v as usize].iter().enumerate() {
            grads.tables[f].row_mut(id as usize).scaled_add(1.0, &dx.slice(s![i, f * fd..(f + 1) * fd]));
        }
    }
    let rows: Vec<usize> = acts.levels[0].iter().map(|&v| v as usize).collect();
    let dense = inputs.dense.select(Axis(0), &rows);
    let pre = inputs.pretrained.select(Axis(0), &rows);
    grads.dense_proj = dx.slice(s![.., t * fd..(t + 1) * fd]).t().dot(&dense);
    grads.pretrained_proj = dx.slice(s![.., (t + 1) * fd..(t + 2) * fd]).t().dot(&pre);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_inputs(n: usize) -> NodeInputs {
        NodeInputs {
            sparse: (0..n).map(|i| vec![i as u32 + 1, (i % 3) as u32 + 1]).collect(),
            dense: Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0),
            pretrained: Array2::from_shape_fn((n, 3), |(i, j)| ((i + j) % 4) as f64 * 0.5),
            table_rows: vec![n + 1, 4],
        }
    }

    fn nb(layers: Vec<Vec<(u32, f64)>>) -> SampledNeighborhood {
        SampledNeighborhood { layers }
    }

    #[test]
    fn zero_params_project_to_zero() {
        let inputs = toy_inputs(3);
        let p = ModelParams::zeros(&ModelShape::new(&inputs, 4, 2, 1));
        assert!(project(&p, &inputs, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selector_on_item_slot_returns_item_row() {
        let inputs = toy_inputs(3);
        let shape = ModelShape::new(&inputs, 2, 2, 1);
        let mut p = ModelParams::init(&shape, &mut ChaCha8Rng::seed_from_u64(1));
        p.w0.fill(0.0);
        p.w0[[0, 0]] = 1.0;
        p.w0[[1, 1]] = 1.0;
        assert_eq!(project(&p, &inputs, 2), p.tables[0].row(3).to_owned());
    }

    #[test]
    fn dense_contribution_is_linear() {
        let mut inputs = toy_inputs(3);
        let shape = ModelShape::new(&inputs, 4, 2, 1);
        let mut p = ModelParams::init(&shape, &mut ChaCha8Rng::seed_from_u64(2));
        let base = project(&p, &inputs, 0);
        let saved = p.dense_proj.clone();
        p.dense_proj.fill(0.0);
        let without = project(&p, &inputs, 0);
        p.dense_proj = saved;
        inputs.dense.mapv_inplace(|v| 2.0 * v);
        let doubled = project(&p, &inputs, 0);
        for i in 0..4 {
            let contrib = base[i] - without[i];
            assert!((doubled[i] - without[i] - 2.0 * contrib).abs() < 1e-12);
        }
    }

    #[test]
    fn gnn_block_aggregation() {
        let w = Array2::from_shape_fn((2, 4), |(i, j)| if j == i + 2 { 1.0 } else { 0.0 });
        let center = array![5.0, 5.0];
        let u = array![1.5, -2.0];
        let out = gnn_block(center.view(), &[(3, u.view(), 1.0)], &w);
        assert_eq!(out, u);
        let neg = -&u;
        let out = gnn_block(center.view(), &[(3, u.view(), 0.5), (4, neg.view(), 0.5)], &w);
        assert_eq!(out, array![0.0, 0.0]);
        let a = array![0.1, 0.7];
        let b = array![0.3, -0.9];
        let c = array![1e-3, 1e3];
        let l1 = [(1, a.view(), 0.2), (2, b.view(), 0.3), (3, c.view(), 0.5)];
        let l2 = [(3, c.view(), 0.5), (1, a.view(), 0.2), (2, b.view(), 0.3)];
        assert_eq!(gnn_block(center.view(), &l1, &w), gnn_block(center.view(), &l2, &w));
        assert_eq!(gnn_block(center.view(), &[], &w), array![0.0, 0.0]);
    }

    #[test]
    fn gnn_block_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = ModelParams::init(&ModelShape::new(&toy_inputs(2), 3, 2, 1), &mut rng).layers[0].clone();
        let (c1, n1) = (array![0.3, -1.0, 2.0], array![1.0, 0.5, -0.25]);
        let (c2, n2) = (array![-0.7, 0.2, 0.1], array![0.0, 3.0, 1.0]);
        let f = |c: &Array1<f64>, n: &Array1<f64>| gnn_block(c.view(), &[(0, n.view(), 1.0)], &w);
        let sum = f(&(&c1 + &c2), &(&n1 + &n2));
        let parts = f(&c1, &n1) + f(&c2, &n2);
        for (a, b) in sum.iter().zip(parts.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_per_node_composition() {
        let inputs = toy_inputs(5);
        let p = ModelParams::init(&ModelShape::new(&inputs, 4, 3, 2), &mut ChaCha8Rng::seed_from_u64(4));
        let mut nbh = BTreeMap::new();
        nbh.insert(0, nb(vec![vec![(1, 0.25), (2, 0.75)], vec![(3, 1.0)]]));
        nbh.insert(1, nb(vec![vec![(3, 1.0)], vec![]]));
        nbh.insert(2, nb(vec![vec![], vec![]]));
        let acts = forward(&p, &inputs, &nbh, &[0]).unwrap();
        assert_eq!(acts.levels, vec![vec![0, 1, 2, 3], vec![0, 1, 2], vec![0]]);
        let h0 = |v| project(&p, &inputs, v);
        let h1 = |v: u32, list: &[(u32, f64)]| {
            let hs: Vec<Array1<f64>> = list.iter().map(|&(n, _)| h0(n)).collect();
            let l: Vec<(u32, ArrayView1<f64>, f64)> =
                list.iter().zip(&hs).map(|(&(n, w), h)| (n, h.view(), w)).collect();
            gnn_block(h0(v).view(), &l, &p.layers[0])
        };
        let (a, b, c) = (h1(0, &[(1, 0.25), (2, 0.75)]), h1(1, &[(3, 1.0)]), h1(2, &[]));
        let expect = gnn_block(a.view(), &[(1, b.view(), 0.25), (2, c.view(), 0.75)], &p.layers[1]);
        for (x, y) in acts.output(0).unwrap().iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_zero_returns_projection() {
        let inputs = toy_inputs(3);
        let p = ModelParams::init(&ModelShape::new(&inputs, 4, 2, 0), &mut ChaCha8Rng::seed_from_u64(5));
        let acts = forward(&p, &inputs, &BTreeMap::new(), &[2]).unwrap();
        let expect = project(&p, &inputs, 2);
        for (x, y) in acts.output(2).unwrap().iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_neighborhoods_propagate_center_slot() {
        let inputs = toy_inputs(2);
        let p = ModelParams::init(&ModelShape::new(&inputs, 3, 2, 2), &mut ChaCha8Rng::seed_from_u64(6));
        let mut nbh = BTreeMap::new();
        nbh.insert(0, nb(vec![vec![], vec![]]));
        let acts = forward(&p, &inputs, &nbh, &[0]).unwrap();
        let centre = |w: &Array2<f64>| w.slice(s![.., ..3]).to_owned();
        let expect = centre(&p.layers[1]).dot(&centre(&p.layers[0])).dot(&project(&p, &inputs, 0));
        for (x, y) in acts.output(0).unwrap().iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_twins_share_outputs_and_forward_is_pure() {
        let mut inputs = toy_inputs(4);
        inputs.sparse[1] = inputs.sparse[0].clone();
        let (d0, p0) = (inputs.dense.row(0).to_owned(), inputs.pretrained.row(0).to_owned());
        inputs.dense.row_mut(1).assign(&d0);
        inputs.pretrained.row_mut(1).assign(&p0);
        let p = ModelParams::init(&ModelShape::new(&inputs, 4, 2, 1), &mut ChaCha8Rng::seed_from_u64(7));
        let mut nbh = BTreeMap::new();
        nbh.insert(0, nb(vec![vec![(2, 0.5), (3, 0.5)]]));
        nbh.insert(1, nb(vec![vec![(2, 0.5), (3, 0.5)]]));
        let a = forward(&p, &inputs, &nbh, &[0, 1]).unwrap();
        assert_eq!(a.output(0).unwrap(), a.output(1).unwrap());
        let b = forward(&p, &inputs, &nbh, &[1, 0]).unwrap();
        assert_eq!(a.outputs(), b.outputs());
    }

    #[test]
    fn missing_neighborhood_is_fatal() {
        let inputs = toy_inputs(2);
        let p = ModelParams::zeros(&ModelShape::new(&inputs, 2, 2, 1));
        assert!(matches!(forward(&p, &inputs, &BTreeMap::new(), &[0]), Err(Error::Consistency(_))));
    }
}
