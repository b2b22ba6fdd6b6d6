//! Symmetric log transform and two-hot discrete regression over a fixed bin grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `sign(x) * ln(1 + |x|)`.
pub fn symlog<T: Scalar>(x: T) -> T {
    x.signum() * x.abs().ln_1p()
}

/// Inverse of [`symlog`]: `sign(y) * (exp(|y|) - 1)`.
pub fn symexp<T: Scalar>(y: T) -> T {
    y.signum() * y.abs().exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGridConfig {
    pub count: usize,
    /// Grid endpoints in symlog space.
    pub low: f64,
    pub high: f64,
}

impl Default for BinGridConfig {
    fn default() -> Self {
        Self {
            count: 255,
            low: -20.0,
            high: 20.0,
        }
    }
}

/// Strictly increasing bin centers used by the reward and value heads.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid<T> {
    centers: Vec<T>,
}

impl<T: Scalar> BinGrid<T> {
    pub fn new(centers: Vec<T>) -> Result<Self> {
        if centers.len() < 2 || centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedBins);
        }
        Ok(Self { centers })
    }

    /// `count` centers at `symexp` of evenly spaced points in `[low, high]`.
    pub fn symexp_spaced(cfg: &BinGridConfig) -> Result<Self> {
        if cfg.count < 2 || cfg.low >= cfg.high {
            return Err(Error::InvalidConfig(format!("bad bin grid {cfg:?}")));
        }
        let n = cfg.count;
        let centers = (0..n)
            .map(|i| {
                // Evaluate symmetric pairs from the same magnitude so the grid is exactly symmetric.
                let j = n - 1 - i;
                let t = if i <= j {
                    cfg.low + (cfg.high - cfg.low) * i as f64 / (n - 1) as f64
                } else {
                    -(cfg.low + (cfg.high - cfg.low) * j as f64 / (n - 1) as f64)
                };
                T::lit(symexp(t))
            })
            .collect();
        Self::new(centers)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    /// Writes two-hot weights for `value` into `out` (length = bin count).
    ///
    /// Values outside the grid are clamped to the end bins.
    pub fn encode_into(&self, value: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.centers.len());
        out.iter_mut().for_each(|w| *w = T::zero());
        let c = &self.centers;
        let last = c.len() - 1;
        if !(value > c[0]) {
            out[0] = T::one();
            return;
        }
        if value >= c[last] {
            out[last] = T::one();
            return;
        }
        // First index with center > value; value lies in [c[hi-1], c[hi]).
        let hi = c.partition_point(|&x| x <= value);
        let lo = hi - 1;
        let span = c[hi] - c[lo];
        let w_hi = (value - c[lo]) / span;
        out[lo] = T::one() - w_hi;
        out[hi] = w_hi;
    }

    pub fn encode(&self, value: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.centers.len()];
        self.encode_into(value, &mut out);
        out
    }

    /// `sum_i weights_i * center_i`.
    pub fn decode(&self, weights: &[T]) -> T {
        weights
            .iter()
            .zip(&self.centers)
            .map(|(&w, &c)| w * c)
            .sum()
    }
}
