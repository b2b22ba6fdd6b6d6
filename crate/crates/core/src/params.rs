//! Named parameter tensors and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip applied before the update.
    pub clip: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Parameters owned by one network plus its Adam state.
///
/// `group` distinguishes sets that are bound into the same [`crate::Graph`].
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    group: u16,
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(group: u16) -> Self {
        Self {
            group,
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    /// Same parameters under another group id (e.g. a frozen copy bound next to the original).
    pub fn with_group(mut self, group: u16) -> Self {
        self.group = group;
        self
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Registers a parameter. Names must be unique within the set.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            m: zeros.clone(),
            v: zeros,
            value,
        });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.params[index].name
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.params[index].value
    }

    pub fn moments(&self, index: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.params[index].m, &self.params[index].v)
    }

    pub fn set_moments(&mut self, index: usize, m: Tensor<T>, v: Tensor<T>) -> Result<()> {
        let p = &mut self.params[index];
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                context: "ParamSet::set_moments",
                expected: p.value.shape().to_vec(),
                found: m.shape().to_vec(),
            });
        }
        p.m = m;
        p.v = v;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Copies values (not optimizer state) from a set with identical layout.
    pub fn copy_values_from(&mut self, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// `self = (1 - rate) * self + rate * other`, elementwise.
    pub fn ema_from(&mut self, other: &Self, rate: T) -> Result<()> {
        self.check_layout(other)?;
        let keep = T::one() - rate;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, &y) in a.value.data_mut().iter_mut().zip(b.value.data()) {
                *x = keep * *x + rate * y;
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::ShapeMismatch {
                context: "ParamSet layout",
                expected: vec![self.params.len()],
                found: vec![other.params.len()],
            });
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.value.shape() != b.value.shape() {
                return Err(Error::ShapeMismatch {
                    context: "ParamSet layout",
                    expected: a.value.shape().to_vec(),
                    found: b.value.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            group: self.group,
            step: self.step,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    m: p.m.cast(),
                    v: p.v.cast(),
                })
                .collect(),
        }
    }

    /// One Adam update with bias correction.
    ///
    /// Gradients are first rescaled so their global L2 norm is at most `cfg.clip`.
    /// Returns the pre-clip gradient norm.
    pub fn adam_step(&mut self, grads: &[Tensor<T>], cfg: &AdamConfig) -> Result<T> {
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "adam_step",
                expected: vec![self.params.len()],
                found: vec![grads.len()],
            });
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    context: "adam_step",
                    expected: p.value.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        let norm = grads.iter().map(|g| g.sq_norm()).sum::<T>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        let clip = T::lit(cfg.clip);
        let scale = if norm > clip { clip / norm } else { T::one() };

        self.step += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        for (p, g) in self.params.iter_mut().zip(grads) {
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let gi = gi * scale;
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// Truncated normal (|z| < 2) scaled by `1/sqrt(fan_in)`, shape `[fan_in, fan_out]`.
pub fn init_weight<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() < 2.0 {
                // 0.8796 is the std of a standard normal truncated at +-2.
                break T::lit(z * std / 0.879_625_6);
            }
        })
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}
