use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1};

use super::Activations;
use crate::error::{Error, Result};
use crate::sampler::TrainingBatch;

static ZERO_NORM: AtomicU64 = AtomicU64::new(0);

/// Number of cosine evaluations that met a zero vector, process-wide.
pub fn zero_norm_count() -> u64 {
    ZERO_NORM.load(Ordering::Relaxed)
}

/// Cosine similarity; 0 when either vector is zero. A single square root keeps
/// `cosine(a, a)` exactly 1.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (aa, bb) = (a.dot(&a), b.dot(&b));
    if aa == 0.0 || bb == 0.0 {
        ZERO_NORM.fetch_add(1, Ordering::Relaxed);
        return 0.0;
    }
    (a.dot(&b) / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine and its gradients with respect to both arguments.
fn cosine_with_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        ZERO_NORM.fetch_add(1, Ordering::Relaxed);
        return (0.0, Array1::zeros(a.len()), Array1::zeros(b.len()));
    }
    let c = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (c / (na * na));
    let db = &a / (na * nb) - &b * (c / (nb * nb));
    (c, da, db)
}

/// `−log softmax([cos(t, c₀), cos(t, c₁), …] / τ)[0]` with `c₀` the positive, and its
/// gradients with respect to the target and every candidate.
pub fn softmax_loss(
    target: ArrayView1<f64>,
    candidates: &[ArrayView1<f64>],
    tau: f64,
) -> (f64, Array1<f64>, Vec<Array1<f64>>) {
    let parts: Vec<_> = candidates.iter().map(|c| cosine_with_grad(target, *c)).collect();
    let logits: Vec<f64> = parts.iter().map(|p| p.0 / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = max + z.ln() - logits[0];
    let mut d_target = Array1::zeros(target.len());
    let d_cands = parts
        .into_iter()
        .zip(&logits)
        .enumerate()
        .map(|(j, ((_, dt, dc), l))| {
            let p = (l - max).exp() / z;
            let g = (p - if j == 0 { 1.0 } else { 0.0 }) / tau;
            d_target.scaled_add(g, &dt);
            dc * g
        })
        .collect();
    (loss, d_target, d_cands)
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean over rows.
    pub loss: f64,
    /// Gradient of the mean loss, rows aligned with the activations' roots.
    pub d_out: Array2<f64>,
}

/// Loss over every row of `batch`: candidates are the row's positive, the shared random
/// negatives, then the row's hard negatives.
pub fn batch_loss(acts: &Activations, batch: &TrainingBatch, tau: f64) -> Result<BatchLoss> {
    let out = acts.outputs();
    let mut d_out = Array2::zeros(out.raw_dim());
    let row =
        |v: u32| acts.output_row(v).ok_or_else(|| Error::Consistency(format!("node {v} missing from forward pass")));
    let rows = batch.targets.len();
    let mut total = 0.0;
    for i in 0..rows {
        let t = row(batch.targets[i])?;
        let mut cand = vec![row(batch.positives[i])?];
        for &n in &batch.random_negatives {
            cand.push(row(n)?);
        }
        for &n in batch.hard_negatives.get(i).map_or(&[][..], Vec::as_slice) {
            cand.push(row(n)?);
        }
        let views: Vec<_> = cand.iter().map(|&c| out.row(c)).collect();
        let (l, dt, dc) = softmax_loss(out.row(t), &views, tau);
        total += l;
        let scale = 1.0 / rows as f64;
        d_out.row_mut(t).scaled_add(scale, &dt);
        for (c, g) in cand.iter().zip(dc) {
            d_out.row_mut(*c).scaled_add(scale, &g);
        }
    }
    let loss = if rows == 0 { 0.0 } else { total / rows as f64 };
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {loss}")));
    }
    Ok(BatchLoss { loss, d_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_values() {
        let a = array![1.0, 2.0, -3.0];
        assert!((cosine(a.view(), a.view()) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 2.0].view()), 0.0);
        assert!((cosine(a.view(), (-&a).view()) + 1.0).abs() < 1e-15);
        let before = zero_norm_count();
        assert_eq!(cosine(a.view(), Array1::zeros(3).view()), 0.0);
        assert!(zero_norm_count() > before);
    }

    #[test]
    fn closed_form_losses() {
        let t = array![1.0, 0.0];
        let (l, _, _) = softmax_loss(t.view(), &[t.view(), (-&t).view()], 1.0);
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((expect - 0.1269).abs() < 1e-4);
        let p = array![0.6, 0.8];
        let (l, _, _) = softmax_loss(t.view(), &[p.view(), p.view()], 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let n = array![0.0, 1.0];
        let (l, _, _) = softmax_loss(t.view(), &[p.view(), n.view()], 0.01);
        assert!(l < 1e-12);
    }

    #[test]
    fn gradients_are_orthogonal_and_match_differences() {
        let t = array![0.3, -1.2, 0.5];
        let c = [array![1.0, 0.2, -0.4], array![-0.3, 0.9, 0.1], array![0.5, 0.5, 0.5]];
        let views: Vec<_> = c.iter().map(|v| v.view()).collect();
        let (_, dt, dc) = softmax_loss(t.view(), &views, 0.3);
        assert!(dt.dot(&t).abs() < 1e-8);
        for (g, v) in dc.iter().zip(&c) {
            assert!(g.dot(v).abs() < 1e-8);
        }
        let eps = 1e-6;
        for i in 0..3 {
            let mut tp = t.clone();
            tp[i] += eps;
            let mut tm = t.clone();
            tm[i] -= eps;
            let fd = (softmax_loss(tp.view(), &views, 0.3).0 - softmax_loss(tm.view(), &views, 0.3).0) / (2.0 * eps);
            assert!((fd - dt[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let t = array![0.3, -1.2];
        let c = [array![1.0, 0.2], array![-0.3, 0.9], array![0.5, 0.5]];
        let views: Vec<_> = c.iter().map(|v| v.view()).collect();
        let tau = 0.07;
        let logits: Vec<f64> = views.iter().map(|v| cosine(t.view(), *v) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let p: f64 = logits.iter().map(|l| (l - max).exp() / z).sum();
        assert!((p - 1.0).abs() < 1e-12);
        let (l, _, _) = softmax_loss(t.view(), &views, tau);
        assert!((l + ((logits[0] - max).exp() / z).ln()).abs() < 1e-12);
    }
}
