//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! A [`Graph`] is an append-only tape of 2-D tensors. Every operation records
//! its inputs; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for the parameters that were bound with [`Graph::param`].
//! Graphs are built per forward pass and dropped afterwards.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param { group: u16, index: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Act(Var, Activation),
    Exp(Var),
    Ln(Var),
    Square(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GroupLogProbs { logits: Var, classes: usize, mix: T, probs: Vec<T> },
    SumRows(Var),
    SumAll(Var),
    ClampMin(Var, T),
    BceWithLogits(Var, Vec<T>),
    StraightThrough(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<(u16, usize), Var>,
    track: bool,
    detached: Detached<T>,
}

/// What [`Graph::detach`] does besides cutting the gradient.
#[derive(Debug, Clone)]
enum Detached<T> {
    Plain,
    /// Keep a copy of every detached value, in call order.
    Record(Vec<Tensor<T>>),
    /// Substitute previously recorded values, in call order.
    Replay(std::vec::IntoIter<Tensor<T>>),
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            track: true,
            detached: Detached::Plain,
        }
    }

    /// Records the value of every stop-gradient node (see [`Graph::take_detached`]).
    pub fn recording_detached(mut self) -> Self {
        self.detached = Detached::Record(Vec::new());
        self
    }

    /// Stop-gradient nodes return `values` in order instead of their input.
    ///
    /// Evaluating a perturbed loss this way holds every stop-gradient operand at its reference
    /// value, so the loss's true derivative equals the analytic (stop-gradient) one. Used by
    /// finite-difference checks.
    pub fn replaying_detached(mut self, values: Vec<Tensor<T>>) -> Self {
        self.detached = Detached::Replay(values.into_iter());
        self
    }

    pub fn take_detached(&mut self) -> Vec<Tensor<T>> {
        match std::mem::replace(&mut self.detached, Detached::Plain) {
            Detached::Record(v) => v,
            _ => Vec::new(),
        }
    }

    /// A graph whose parameters are bound as constants; nothing is differentiable.
    pub fn inference() -> Self {
        Self {
            track: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let value = if value.shape().len() == 2 {
            value
        } else {
            let (r, c) = (value.rows(), value.cols());
            Tensor::matrix(r, c, value.into_data())
        };
        self.push(value, Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = match &mut self.detached {
            Detached::Plain => self.nodes[v.0].value.clone(),
            Detached::Record(log) => {
                let value = self.nodes[v.0].value.clone();
                log.push(value.clone());
                value
            }
            Detached::Replay(values) => {
                let value = values.next().expect("replayed graph detaches more often than the recorded one");
                assert_eq!(value.shape(), self.nodes[v.0].value.shape(), "replayed detach shape");
                value
            }
        };
        self.push(value, Op::Leaf, false)
    }

    /// Binds parameter `index` of `params`; repeated binds return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, index: usize) -> Var {
        let key = (params.group(), index);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let t = params.value(index);
        let value = Tensor::matrix(t.rows(), t.cols(), t.data().to_vec());
        let v = if self.track {
            self.push(
                value,
                Op::Param {
                    group: key.0,
                    index,
                },
                true,
            )
        } else {
            self.push(value, Op::Leaf, false)
        };
        self.bound.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![T::zero(); n * m];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            T::gemm(
                n,
                k,
                m,
                T::one(),
                av,
                k as isize,
                1,
                bv,
                m as isize,
                1,
                T::zero(),
                &mut out,
                m as isize,
                1,
            );
        }
        let ng = self.ng(&[a, b]);
        self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            (ta.rows(), ta.cols()),
            (tb.rows(), tb.cols()),
            "elementwise shape mismatch"
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::matrix(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// `x [n, m] + row [1, m]`, broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(row), (1, m), "add_row shape");
        let mut data = self.value(x).data().to_vec();
        let r = self.value(row).data();
        for chunk in data.chunks_mut(m) {
            for (d, &b) in chunk.iter_mut().zip(r) {
                *d += b;
            }
        }
        let ng = self.ng(&[x, row]);
        self.push(Tensor::matrix(n, m, data), Op::AddRow(x, row), ng)
    }

    /// `x [n, m] * col [n, 1]`, broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(col), (n, 1), "mul_col shape");
        let mut data = self.value(x).data().to_vec();
        let c = self.value(col).data();
        if m > 0 {
            for (chunk, &s) in data.chunks_mut(m).zip(c) {
                for d in chunk.iter_mut() {
                    *d *= s;
                }
            }
        }
        let ng = self.ng(&[x, col]);
        self.push(Tensor::matrix(n, m, data), Op::MulCol(x, col), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        let ng = self.ng(&[x]);
        self.push(v, Op::Scale(x, s), ng)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a + s);
        let ng = self.ng(&[x]);
        self.push(v, Op::AddScalar(x), ng)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let v = self.value(x).map(|a| apply_activation(a, act));
        let ng = self.ng(&[x]);
        self.push(v, Op::Act(x, act), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.exp());
        let ng = self.ng(&[x]);
        self.push(v, Op::Exp(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.ln());
        let ng = self.ng(&[x]);
        self.push(v, Op::Ln(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        let ng = self.ng(&[x]);
        self.push(v, Op::Square(x), ng)
    }

    /// Per-row layer normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(gain), (1, m), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, m), "layer_norm bias shape");
        let mut xhat = Vec::with_capacity(n * m);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        let mf = T::lit(m as f64);
        {
            let xv = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for row in xv.chunks(m) {
                let mean = row.iter().copied().sum::<T>() / mf;
                let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / mf;
                let is = T::one() / (var + eps).sqrt();
                inv_std.push(is);
                for (j, &a) in row.iter().enumerate() {
                    let h = (a - mean) * is;
                    xhat.push(h);
                    out.push(h * g[j] + b[j]);
                }
            }
        }
        let ng = self.ng(&[x, gain, bias]);
        self.push(
            Tensor::matrix(n, m, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, n, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = self.ng(parts);
        self.push(
            Tensor::matrix(n, total, data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (n, m) = self.shape(x);
        assert!(start <= end && end <= m, "slice_cols bounds");
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for row in self.value(x).data().chunks(m.max(1)).take(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::matrix(n, w, data), Op::SliceCols(x, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors);
        let ng = self.ng(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice_rows(start, end);
        let ng = self.ng(&[x]);
        self.push(v, Op::SliceRows(x, start), ng)
    }

    /// Log-probabilities of per-group categoricals.
    ///
    /// `logits` is `[n, groups * classes]`; each group of `classes` columns is
    /// softmax-normalized, mixed with a uniform distribution by weight `mix`,
    /// and log-transformed.
    pub fn group_log_probs(&mut self, logits: Var, classes: usize, mix: T) -> Var {
        let (n, m) = self.shape(logits);
        assert!(classes > 0 && m % classes == 0, "group_log_probs width");
        let uniform = mix / T::lit(classes as f64);
        let keep = T::one() - mix;
        let mut probs = Vec::with_capacity(n * m);
        let mut out = Vec::with_capacity(n * m);
        for group in self.value(logits).data().chunks(classes) {
            let max = group.iter().copied().fold(T::neg_infinity(), T::max);
            let start = probs.len();
            let mut z = T::zero();
            for &l in group {
                let e = (l - max).exp();
                z += e;
                probs.push(e);
            }
            for (i, p) in probs[start..].iter_mut().enumerate() {
                *p /= z;
                if mix > T::zero() {
                    out.push((keep * *p + uniform).ln());
                } else {
                    out.push(group[i] - max - z.ln());
                }
            }
        }
        let ng = self.ng(&[logits]);
        self.push(
            Tensor::matrix(n, m, out),
            Op::GroupLogProbs {
                logits,
                classes,
                mix,
                probs,
            },
            ng,
        )
    }

    /// Row sums, `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let data: Vec<T> = if m == 0 {
            vec![T::zero(); n]
        } else {
            self.value(x)
                .data()
                .chunks(m)
                .map(|r| r.iter().copied().sum())
                .collect()
        };
        let ng = self.ng(&[x]);
        self.push(Tensor::matrix(n, 1, data), Op::SumRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// `max(x, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        let v = self.value(x).map(|a| a.max(floor));
        let ng = self.ng(&[x]);
        self.push(v, Op::ClampMin(x, floor), ng)
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Var {
        let t = targets.data().to_vec();
        let lv = self.value(logits);
        assert_eq!(lv.len(), t.len(), "bce target length");
        let data = lv
            .data()
            .iter()
            .zip(&t)
            .map(|(&x, &y)| softplus(x) - y * x)
            .collect();
        let v = Tensor::matrix(lv.rows(), lv.cols(), data);
        let ng = self.ng(&[logits]);
        self.push(v, Op::BceWithLogits(logits, t), ng)
    }

    /// Straight-through estimator: forward value is `sample`, backward is the identity onto `probs`.
    pub fn straight_through(&mut self, probs: Var, sample: Tensor<T>) -> Var {
        let (n, m) = self.shape(probs);
        assert_eq!((sample.rows(), sample.cols()), (n, m), "straight_through shape");
        let sample = Tensor::matrix(n, m, sample.into_data());
        let ng = self.ng(&[probs]);
        self.push(sample, Op::StraightThrough(probs), ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        lv.check_finite("loss")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients {
            by_param: HashMap::new(),
        };
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param { group, index } = node.op {
                g.check_finite("backward")?;
                out.by_param.insert((group, index), g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.axpy(T::one(), &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let (n, m) = (y.rows(), y.cols());
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let k = self.shape(a).1;
                if self.nodes[a.0].needs_grad {
                    // dA = G * B^T
                    let mut da = vec![T::zero(); n * k];
                    T::gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        g.data(),
                        m as isize,
                        1,
                        self.value(b).data(),
                        1,
                        m as isize,
                        T::zero(),
                        &mut da,
                        k as isize,
                        1,
                    );
                    self.accumulate(grads, a, Tensor::matrix(n, k, da));
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T * G
                    let mut db = vec![T::zero(); k * m];
                    T::gemm(
                        k,
                        n,
                        m,
                        T::one(),
                        self.value(a).data(),
                        1,
                        k as isize,
                        g.data(),
                        m as isize,
                        1,
                        T::zero(),
                        &mut db,
                        m as isize,
                        1,
                    );
                    self.accumulate(grads, b, Tensor::matrix(k, m, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].needs_grad {
                    let d = mul_elem(g, self.value(b));
                    self.accumulate(grads, a, d);
                }
                if self.nodes[b.0].needs_grad {
                    let d = mul_elem(g, self.value(a));
                    self.accumulate(grads, b, d);
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.nodes[row.0].needs_grad {
                    self.accumulate(grads, *row, column_sums(g));
                }
            }
            Op::MulCol(x, col) => {
                let (x, col) = (*x, *col);
                let c = self.value(col).data();
                if self.nodes[x.0].needs_grad {
                    let mut d = g.data().to_vec();
                    if m > 0 {
                        for (chunk, &s) in d.chunks_mut(m).zip(c) {
                            for v in chunk.iter_mut() {
                                *v *= s;
                            }
                        }
                    }
                    self.accumulate(grads, x, Tensor::matrix(n, m, d));
                }
                if self.nodes[col.0].needs_grad {
                    let xv = self.value(x).data();
                    let d: Vec<T> = (0..n)
                        .map(|r| {
                            (0..m)
                                .map(|j| g.data()[r * m + j] * xv[r * m + j])
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, col, Tensor::matrix(n, 1, d));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Act(x, act) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .zip(y.data())
                    .map(|((&gi, &xi), &yi)| gi * activation_grad(xi, yi, *act))
                    .collect();
                self.accumulate(grads, *x, Tensor::matrix(n, m, data));
            }
            Op::Exp(x) => self.accumulate(grads, *x, mul_elem(g, y)),
            Op::Ln(x) => {
                let xv = self.value(*x).data();
                let data = g.data().iter().zip(xv).map(|(&a, &b)| a / b).collect();
                self.accumulate(grads, *x, Tensor::matrix(n, m, data));
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = T::lit(2.0);
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&a, &b)| two * a * b)
                    .collect();
                self.accumulate(grads, *x, Tensor::matrix(n, m, data));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                if self.nodes[gain.0].needs_grad {
                    let mut dg = vec![T::zero(); m];
                    for (gr, hr) in g.data().chunks(m).zip(xhat.chunks(m)) {
                        for j in 0..m {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::matrix(1, m, dg));
                }
                if self.nodes[bias.0].needs_grad {
                    self.accumulate(grads, *bias, column_sums(g));
                }
                if self.nodes[x.0].needs_grad {
                    let mf = T::lit(m as f64);
                    let mut dx = Vec::with_capacity(n * m);
                    for r in 0..n {
                        let gr = &g.data()[r * m..(r + 1) * m];
                        let hr = &xhat[r * m..(r + 1) * m];
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..m {
                            let d = gr[j] * gv[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= mf;
                        mean_dh /= mf;
                        for j in 0..m {
                            let d = gr[j] * gv[j];
                            dx.push(inv_std[r] * (d - mean_d - hr[j] * mean_dh));
                        }
                    }
                    self.accumulate(grads, *x, Tensor::matrix(n, m, dx));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g.data()[r * m + offset..r * m + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(n, w, d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (xn, xm) = self.shape(*x);
                let mut d = vec![T::zero(); xn * xm];
                for r in 0..xn {
                    d[r * xm + start..r * xm + start + m]
                        .copy_from_slice(&g.data()[r * m..(r + 1) * m]);
                }
                self.accumulate(grads, *x, Tensor::matrix(xn, xm, d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.nodes[p.0].needs_grad {
                        self.accumulate(grads, p, g.slice_rows(offset, offset + rows));
                    }
                    offset += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let (xn, xm) = self.shape(*x);
                let mut d = vec![T::zero(); xn * xm];
                d[start * xm..(start + n) * xm].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::matrix(xn, xm, d));
            }
            Op::GroupLogProbs {
                logits,
                classes,
                mix,
                probs,
            } => {
                let keep = T::one() - *mix;
                let mut d = Vec::with_capacity(n * m);
                for ((gg, pg), yg) in g
                    .data()
                    .chunks(*classes)
                    .zip(probs.chunks(*classes))
                    .zip(y.data().chunks(*classes))
                {
                    // ratio_j = p_j / mixed_j, where mixed_j = exp(y_j)
                    let mut inner = T::zero();
                    let ratios: Vec<T> = pg
                        .iter()
                        .zip(yg)
                        .map(|(&p, &lm)| if *mix > T::zero() { p / lm.exp() } else { T::one() })
                        .collect();
                    for j in 0..*classes {
                        inner += gg[j] * ratios[j];
                    }
                    for j in 0..*classes {
                        d.push(keep * (gg[j] * ratios[j] - pg[j] * inner));
                    }
                }
                self.accumulate(grads, *logits, Tensor::matrix(n, m, d));
            }
            Op::SumRows(x) => {
                let xm = self.shape(*x).1;
                let mut d = Vec::with_capacity(n * xm);
                for &gi in g.data() {
                    d.extend(std::iter::repeat_n(gi, xm));
                }
                self.accumulate(grads, *x, Tensor::matrix(n, xm, d));
            }
            Op::SumAll(x) => {
                let (xn, xm) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::full(&[xn, xm], g.item()));
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&a, &b)| if b > *floor { a } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::matrix(n, m, data));
            }
            Op::BceWithLogits(x, targets) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .zip(targets)
                    .map(|((&a, &l), &t)| a * (sigmoid(l) - t))
                    .collect();
                self.accumulate(grads, *x, Tensor::matrix(n, m, data));
            }
            Op::StraightThrough(probs) => self.accumulate(grads, *probs, g.clone()),
        }
    }
}

/// Gradients keyed by bound parameter.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_param: HashMap<(u16, usize), Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradients aligned with `params`; parameters the loss does not reach get zeros.
    pub fn for_params(&self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        (0..params.len())
            .map(|i| match self.by_param.get(&(params.group(), i)) {
                Some(g) => Tensor::new(params.value(i).shape().to_vec(), g.data().to_vec())
                    .expect("gradient shape matches parameter"),
                None => Tensor::zeros(params.value(i).shape()),
            })
            .collect()
    }

    pub fn touches(&self, params: &ParamSet<T>) -> bool {
        self.by_param.keys().any(|(g, _)| *g == params.group())
    }
}

/// Convenience: gradient of `loss` with respect to every parameter in `params`.
pub fn grad<T: Scalar>(graph: &Graph<T>, loss: Var, params: &ParamSet<T>) -> Result<Vec<Tensor<T>>> {
    Ok(graph.backward(loss)?.for_params(params))
}

fn mul_elem<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let m = g.cols();
    let mut s = vec![T::zero(); m];
    for row in g.data().chunks(m.max(1)) {
        for (a, &b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    Tensor::matrix(1, m, s)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn apply_activation<T: Scalar>(x: T, act: Activation) -> T {
    match act {
        Activation::Identity => x,
        Activation::Silu => x * sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sigmoid(x),
        Activation::Relu => x.max(T::zero()),
    }
}

#[inline]
fn activation_grad<T: Scalar>(x: T, y: T, act: Activation) -> T {
    match act {
        Activation::Identity => T::one(),
        Activation::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        Activation::Tanh => T::one() - y * y,
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}
