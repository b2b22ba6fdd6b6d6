//! Grouped categorical distributions: sampling, straight-through gradients, KL and entropy.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Produces one-hot samples from per-group probabilities.
pub trait Sampler<T: Scalar> {
    /// `probs` is `[n, groups * classes]`; returns a tensor of the same shape.
    fn sample(&mut self, probs: &Tensor<T>, classes: usize) -> Tensor<T>;
}

/// Inverse-CDF sampling, one uniform draw per group, in row-major group order.
pub struct RngSampler<'a, R: ?Sized>(pub &'a mut R);

impl<T: Scalar, R: Rng + ?Sized> Sampler<T> for RngSampler<'_, R> {
    fn sample(&mut self, probs: &Tensor<T>, classes: usize) -> Tensor<T> {
        let mut out = vec![T::zero(); probs.len()];
        for (group, slot) in probs.data().chunks(classes).zip(out.chunks_mut(classes)) {
            let u: f64 = self.0.random();
            slot[sample_index(group, u)] = T::one();
        }
        Tensor::matrix(probs.rows(), probs.cols(), out)
    }
}

/// Deterministic argmax per group; ties resolve to the lowest index.
pub struct ModeSampler;

impl<T: Scalar> Sampler<T> for ModeSampler {
    fn sample(&mut self, probs: &Tensor<T>, classes: usize) -> Tensor<T> {
        let mut out = vec![T::zero(); probs.len()];
        for (group, slot) in probs.data().chunks(classes).zip(out.chunks_mut(classes)) {
            slot[argmax(group)] = T::one();
        }
        Tensor::matrix(probs.rows(), probs.cols(), out)
    }
}

/// Returns the probabilities unchanged instead of a one-hot draw.
///
/// With it the straight-through sample equals its own surrogate, so the loss is a smooth
/// function of the parameters and analytic gradients can be compared to finite differences.
pub struct RelaxedSampler;

impl<T: Scalar> Sampler<T> for RelaxedSampler {
    fn sample(&mut self, probs: &Tensor<T>, _classes: usize) -> Tensor<T> {
        probs.clone()
    }
}

/// Index `i` with `cdf[i-1] <= u < cdf[i]`; falls back to the last positive entry.
pub fn sample_index<T: Scalar>(probs: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Output of [`categorical_sample_st`].
pub struct CategoricalSample {
    /// One-hot sample carrying a straight-through gradient to the probabilities.
    pub sample: Var,
    /// Per-class log-probabilities after uniform mixing.
    pub log_probs: Var,
}

/// Samples one class per group of `logits` and wires a straight-through estimator.
pub fn categorical_sample_st<T: Scalar, S: Sampler<T> + ?Sized>(
    g: &mut Graph<T>,
    logits: Var,
    classes: usize,
    unimix: T,
    sampler: &mut S,
) -> CategoricalSample {
    let log_probs = g.group_log_probs(logits, classes, unimix);
    let probs = g.exp(log_probs);
    let drawn = sampler.sample(g.value(probs), classes);
    let sample = g.straight_through(probs, drawn);
    CategoricalSample { sample, log_probs }
}

/// Row-wise KL divergence `sum p (ln p - ln q)` from log-probability matrices, `[n, 1]`.
pub fn kl_rows<T: Scalar>(g: &mut Graph<T>, log_p: Var, log_q: Var) -> Var {
    let p = g.exp(log_p);
    let diff = g.sub(log_p, log_q);
    let terms = g.mul(p, diff);
    g.sum_rows(terms)
}

/// Row-wise entropy `-sum p ln p`, `[n, 1]` (summed over all groups in the row).
pub fn entropy_rows<T: Scalar>(g: &mut Graph<T>, log_p: Var) -> Var {
    let p = g.exp(log_p);
    let terms = g.mul(p, log_p);
    let s = g.sum_rows(terms);
    g.neg(s)
}

/// Row-wise cross-entropy `-sum target * log_p` against constant targets, `[n, 1]`.
pub fn cross_entropy_rows<T: Scalar>(g: &mut Graph<T>, log_p: Var, targets: Tensor<T>) -> Var {
    let t = g.constant(targets);
    let terms = g.mul(t, log_p);
    let s = g.sum_rows(terms);
    g.neg(s)
}
