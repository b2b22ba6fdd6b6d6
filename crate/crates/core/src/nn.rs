//! Layers built on [`Graph`]: affine maps, MLPs with optional layer norm, and a GRU cell.

use rand::Rng;

use crate::graph::{Activation, Graph, Var};
use crate::params::{init_weight, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Truncated normal scaled by fan-in.
    Scaled,
    /// All-zero weights (used for distribution heads).
    Zero,
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: OutputInit,
        rng: &mut R,
    ) -> Self {
        let weight = match init {
            OutputInit::Scaled => init_weight(in_dim, out_dim, rng),
            OutputInit::Zero => Tensor::zeros(&[in_dim, out_dim]),
        };
        let w = params.add(format!("{name}.w"), weight);
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn weight_index(&self) -> usize {
        self.w
    }

    pub fn bias_index(&self) -> usize {
        self.b
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Var {
        assert_eq!(g.shape(x).1, self.in_dim, "linear input width");
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gain: usize,
    bias: usize,
}

/// Affine map, optional layer norm, then activation.
#[derive(Debug, Clone)]
pub struct Dense {
    linear: Linear,
    norm: Option<Norm>,
    act: Activation,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        layer_norm: bool,
        rng: &mut R,
    ) -> Self {
        let linear = Linear::new(params, name, in_dim, out_dim, OutputInit::Scaled, rng);
        let norm = layer_norm.then(|| Norm {
            gain: params.add(format!("{name}.ln.g"), Tensor::full(&[1, out_dim], T::one())),
            bias: params.add(format!("{name}.ln.b"), Tensor::zeros(&[1, out_dim])),
        });
        Self { linear, norm, act }
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Var {
        let mut y = self.linear.forward(g, params, x);
        if let Some(norm) = &self.norm {
            let gain = g.param(params, norm.gain);
            let bias = g.param(params, norm.bias);
            y = g.layer_norm(y, gain, bias, T::lit(LN_EPS));
        }
        g.activation(y, self.act)
    }
}

/// Multi-layer perceptron: hidden [`Dense`] layers followed by a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    hidden: Vec<Dense>,
    out: Linear,
}

impl Mlp {
    /// `sizes` lists every width from input to output, e.g. `[in, h, h, out]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        sizes: &[usize],
        act: Activation,
        layer_norm: bool,
        out_init: OutputInit,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let n = sizes.len();
        let hidden = (0..n - 2)
            .map(|i| {
                Dense::new(
                    params,
                    &format!("{name}.h{i}"),
                    sizes[i],
                    sizes[i + 1],
                    act,
                    layer_norm,
                    rng,
                )
            })
            .collect();
        let out = Linear::new(
            params,
            &format!("{name}.out"),
            sizes[n - 2],
            sizes[n - 1],
            out_init,
            rng,
        );
        Self { hidden, out }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.out.in_dim, |d| d.linear.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn output_layer(&self) -> &Linear {
        &self.out
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Var {
        let mut h = x;
        for layer in &self.hidden {
            h = layer.forward(g, params, h);
        }
        self.out.forward(g, params, h)
    }
}

/// Gated recurrent unit.
///
/// `r = σ(x Wr + h Ur + br)`, `u = σ(x Wu + h Uu + bu)`,
/// `c = tanh(x Wc + r ⊙ (h Uc) + bc)`, `h' = (1 - u) ⊙ h + u ⊙ c`.
#[derive(Debug, Clone)]
pub struct Gru {
    wx: usize,
    wh: usize,
    b: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = params.add(format!("{name}.wx"), init_weight(in_dim, 3 * hidden, rng));
        let wh = params.add(format!("{name}.wh"), init_weight(hidden, 3 * hidden, rng));
        // Update gate starts biased towards keeping the previous state.
        let mut bias = vec![T::zero(); 3 * hidden];
        for b in &mut bias[hidden..2 * hidden] {
            *b = -T::one();
        }
        let b = params.add(format!("{name}.b"), Tensor::matrix(1, 3 * hidden, bias));
        Self {
            wx,
            wh,
            b,
            in_dim,
            hidden,
        }
    }

    pub fn param_indices(&self) -> (usize, usize, usize) {
        (self.wx, self.wh, self.b)
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, h: Var, x: Var) -> Var {
        assert_eq!(g.shape(h).1, self.hidden, "gru state width");
        assert_eq!(g.shape(x).1, self.in_dim, "gru input width");
        let n = self.hidden;
        let wx = g.param(params, self.wx);
        let wh = g.param(params, self.wh);
        let b = g.param(params, self.b);
        let xs = g.matmul(x, wx);
        let xs = g.add_row(xs, b);
        let hs = g.matmul(h, wh);
        let (xr, xu, xc) = (
            g.slice_cols(xs, 0, n),
            g.slice_cols(xs, n, 2 * n),
            g.slice_cols(xs, 2 * n, 3 * n),
        );
        let (hr, hu, hc) = (
            g.slice_cols(hs, 0, n),
            g.slice_cols(hs, n, 2 * n),
            g.slice_cols(hs, 2 * n, 3 * n),
        );
        let r = g.add(xr, hr);
        let r = g.activation(r, Activation::Sigmoid);
        let u = g.add(xu, hu);
        let u = g.activation(u, Activation::Sigmoid);
        let rc = g.mul(r, hc);
        let c = g.add(xc, rc);
        let c = g.activation(c, Activation::Tanh);
        let delta = g.sub(c, h);
        let step = g.mul(u, delta);
        g.add(h, step)
    }
}
