//! Recurrent state-space world model: encoder, GRU sequence model, categorical
//! latents, decoder / reward / continue heads and the training loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{categorical_sample_st, cross_entropy_rows, kl_rows, ModeSampler, Sampler};
use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::nn::{Dense, Gru, Mlp, OutputInit};
use crate::params::ParamSet;
use crate::presets::SizePreset;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{symlog, BinGrid, BinGridConfig};

pub const WORLD_MODEL_GROUP: u16 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub deter: usize,
    pub hidden: usize,
    pub groups: usize,
    pub classes: usize,
    pub depth: usize,
    pub unimix: f64,
    pub free_bits: f64,
    pub beta_pred: f64,
    pub beta_dyn: f64,
    pub beta_rep: f64,
    pub layer_norm: bool,
    pub act: Activation,
    pub bins: BinGridConfig,
}

impl WorldModelConfig {
    pub fn from_preset(p: &SizePreset) -> Self {
        Self {
            deter: p.deter,
            hidden: p.hidden,
            groups: p.groups,
            classes: p.classes,
            depth: p.depth,
            unimix: 0.01,
            free_bits: 1.0,
            beta_pred: 1.0,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            layer_norm: true,
            act: Activation::Silu,
            bins: BinGridConfig::default(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.groups * self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.deter + self.latent_dim()
    }

    fn mlp_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden, self.depth));
        s.push(output);
        s
    }
}

/// Model state `{h, z}` for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub h: Tensor<T>,
    pub z: Tensor<T>,
}

impl<T: Scalar> LatentState<T> {
    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// `[h, z]` per row.
    pub fn features(&self) -> Tensor<T> {
        let (n, dh, dz) = (self.h.rows(), self.h.cols(), self.z.cols());
        let mut data = Vec::with_capacity(n * (dh + dz));
        for r in 0..n {
            data.extend_from_slice(self.h.row(r));
            data.extend_from_slice(self.z.row(r));
        }
        Tensor::matrix(n, dh + dz, data)
    }
}

/// Time-major training sequences: row `t * batch + b` holds step `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelBatch<T> {
    pub batch: usize,
    pub length: usize,
    /// Raw observations, `[T*B, obs_dim]`.
    pub obs: Tensor<T>,
    /// One-hot previous actions, `[T*B, action_dim]` (zero on first steps).
    pub actions: Tensor<T>,
    pub rewards: Tensor<T>,
    pub cont: Tensor<T>,
    pub is_first: Vec<bool>,
}

impl<T: Scalar> WorldModelBatch<T> {
    pub fn rows(&self) -> usize {
        self.batch * self.length
    }

    pub fn validate(&self, obs_dim: usize, action_dim: usize) -> Result<()> {
        let n = self.rows();
        let checks = [
            ("batch observations", self.obs.shape(), [n, obs_dim]),
            ("batch actions", self.actions.shape(), [n, action_dim]),
            ("batch rewards", self.rewards.shape(), [n, 1]),
            ("batch continues", self.cont.shape(), [n, 1]),
        ];
        for (context, found, expected) in checks {
            if found != expected {
                return Err(Error::ShapeMismatch {
                    context,
                    expected: expected.to_vec(),
                    found: found.to_vec(),
                });
            }
        }
        if self.is_first.len() != n {
            return Err(Error::ShapeMismatch {
                context: "batch is_first",
                expected: vec![n],
                found: vec![self.is_first.len()],
            });
        }
        Ok(())
    }

    /// Rows of step `t`.
    pub fn step_rows(&self, t: usize) -> std::ops::Range<usize> {
        t * self.batch..(t + 1) * self.batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// Decoder + reward + continue.
    pub pred: f64,
    pub decoder: f64,
    pub reward: f64,
    pub cont: f64,
    /// Mean clamped KL(sg(post) || prior).
    pub dyn_: f64,
    /// Mean clamped KL(post || sg(prior)).
    pub rep: f64,
    pub total: f64,
}

/// Head outputs for a batch of model states.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    /// Predicted symlog observation.
    pub decoded: Var,
    /// Log-probabilities over the reward bins.
    pub reward_log_probs: Var,
    pub cont_logit: Var,
}

/// Result of the world-model forward pass over a batch.
pub struct WorldModelOutput<T> {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Posterior states for every row (imagination starts), detached.
    pub posterior: LatentState<T>,
}

#[derive(Debug, Clone)]
pub struct WorldModel<T> {
    pub cfg: WorldModelConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub params: ParamSet<T>,
    encoder: Mlp,
    img_in: Dense,
    gru: Gru,
    prior: Mlp,
    posterior: Mlp,
    decoder: Mlp,
    reward: Mlp,
    cont: Mlp,
    bins: BinGrid<T>,
}

impl<T: Scalar> WorldModel<T> {
    pub fn new<R: Rng + ?Sized>(
        cfg: WorldModelConfig,
        obs_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.deter == 0 || cfg.hidden == 0 || cfg.groups == 0 || cfg.classes < 2 {
            return Err(Error::InvalidConfig(format!("bad world-model widths {cfg:?}")));
        }
        let bins = BinGrid::symexp_spaced(&cfg.bins)?;
        let mut p = ParamSet::new(WORLD_MODEL_GROUP);
        let (ln, act) = (cfg.layer_norm, cfg.act);
        let z = cfg.latent_dim();
        let feat = cfg.feature_dim();
        let encoder = Mlp::new(&mut p, "enc", &cfg.mlp_sizes(obs_dim, cfg.hidden), act, ln, OutputInit::Scaled, rng);
        let img_in = Dense::new(&mut p, "img_in", z + action_dim, cfg.hidden, act, ln, rng);
        let gru = Gru::new(&mut p, "gru", cfg.hidden, cfg.deter, rng);
        let prior = Mlp::new(&mut p, "prior", &cfg.mlp_sizes(cfg.deter, z), act, ln, OutputInit::Scaled, rng);
        let posterior = Mlp::new(
            &mut p,
            "post",
            &cfg.mlp_sizes(cfg.deter + cfg.hidden, z),
            act,
            ln,
            OutputInit::Scaled,
            rng,
        );
        let decoder = Mlp::new(&mut p, "dec", &cfg.mlp_sizes(feat, obs_dim), act, ln, OutputInit::Scaled, rng);
        let reward = Mlp::new(&mut p, "rew", &cfg.mlp_sizes(feat, bins.len()), act, ln, OutputInit::Zero, rng);
        let cont = Mlp::new(&mut p, "cont", &cfg.mlp_sizes(feat, 1), act, ln, OutputInit::Scaled, rng);
        Ok(Self {
            cfg,
            obs_dim,
            action_dim,
            params: p,
            encoder,
            img_in,
            gru,
            prior,
            posterior,
            decoder,
            reward,
            cont,
            bins,
        })
    }

    pub fn bins(&self) -> &BinGrid<T> {
        &self.bins
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    /// Parameter indices of the prior head.
    pub fn prior_param_indices(&self) -> Vec<usize> {
        self.param_indices_with_prefix("prior.")
    }

    /// Parameter indices of the posterior head.
    pub fn posterior_param_indices(&self) -> Vec<usize> {
        self.param_indices_with_prefix("post.")
    }

    fn param_indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params.name(i).starts_with(prefix))
            .collect()
    }

    /// Copies the posterior head into the prior head where their shapes agree
    /// (all layers except the first, whose input widths differ).
    pub fn copy_posterior_into_prior(&mut self) {
        let post = self.posterior_param_indices();
        for i in post {
            let name = self.params.name(i).replacen("post.", "prior.", 1);
            if let Some(j) = self.params.index_of(&name) {
                if self.params.value(i).shape() == self.params.value(j).shape() {
                    let v = self.params.value(i).clone();
                    *self.params.value_mut(j) = v;
                }
            }
        }
    }

    fn unimix(&self) -> T {
        T::lit(self.cfg.unimix)
    }

    /// Deterministic starting latent: the prior's mode at `h = 0`, `[1, Z]`.
    pub fn initial_z(&self) -> Tensor<T> {
        let mut g = Graph::inference();
        let h = g.constant(Tensor::zeros(&[1, self.cfg.deter]));
        let logits = self.prior.forward(&mut g, &self.params, h);
        ModeSampler.sample(g.value(logits), self.cfg.classes)
    }

    /// `h = 0`, `z` = [`WorldModel::initial_z`] for `batch` rows.
    pub fn initial_state(&self, batch: usize) -> LatentState<T> {
        let z0 = self.initial_z();
        LatentState {
            h: Tensor::zeros(&[batch, self.cfg.deter]),
            z: repeat_row(&z0, batch),
        }
    }

    /// Encoder embedding of raw observations.
    pub fn embed(&self, g: &mut Graph<T>, obs: &Tensor<T>) -> Var {
        let x = g.constant(obs.map(symlog));
        self.encoder.forward(g, &self.params, x)
    }

    /// Recurrent update `h' = gru(h, proj([z, a]))`.
    pub fn recurrent(&self, g: &mut Graph<T>, h: Var, z: Var, a: Var) -> Var {
        let za = g.concat_cols(&[z, a]);
        let x = self.img_in.forward(g, &self.params, za);
        self.gru.step(g, &self.params, h, x)
    }

    pub fn prior_logits(&self, g: &mut Graph<T>, h: Var) -> Var {
        self.prior.forward(g, &self.params, h)
    }

    pub fn posterior_logits(&self, g: &mut Graph<T>, h: Var, embed: Var) -> Var {
        let x = g.concat_cols(&[h, embed]);
        self.posterior.forward(g, &self.params, x)
    }

    /// Returns `(h', z', posterior log-probs)`.
    pub fn observe_step<S: Sampler<T> + ?Sized>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        z: Var,
        a: Var,
        embed: Var,
        sampler: &mut S,
    ) -> (Var, Var, Var) {
        let h = self.recurrent(g, h, z, a);
        let logits = self.posterior_logits(g, h, embed);
        let s = categorical_sample_st(g, logits, self.cfg.classes, self.unimix(), sampler);
        (h, s.sample, s.log_probs)
    }

    /// Returns `(h', z', prior log-probs)`.
    pub fn imagine_step<S: Sampler<T> + ?Sized>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        z: Var,
        a: Var,
        sampler: &mut S,
    ) -> (Var, Var, Var) {
        let h = self.recurrent(g, h, z, a);
        let logits = self.prior_logits(g, h);
        let s = categorical_sample_st(g, logits, self.cfg.classes, self.unimix(), sampler);
        (h, s.sample, s.log_probs)
    }

    pub fn heads(&self, g: &mut Graph<T>, feat: Var) -> Heads {
        let decoded = self.decoder.forward(g, &self.params, feat);
        let logits = self.reward.forward(g, &self.params, feat);
        let reward_log_probs = g.group_log_probs(logits, self.bins.len(), T::zero());
        let cont_logit = self.cont.forward(g, &self.params, feat);
        Heads {
            decoded,
            reward_log_probs,
            cont_logit,
        }
    }

    /// Expected value per row of a bin distribution given as log-probabilities.
    pub fn decode_bins(&self, log_probs: &Tensor<T>) -> Vec<T> {
        log_probs
            .data()
            .chunks(self.bins.len())
            .map(|lp| {
                lp.iter()
                    .zip(self.bins.centers())
                    .map(|(&l, &c)| l.exp() * c)
                    .sum()
            })
            .collect()
    }

    /// Masks rows that start an episode back to the initial state and a zero action.
    fn reset_rows(
        &self,
        g: &mut Graph<T>,
        h: Var,
        z: Var,
        a: Var,
        first: &[bool],
        z0: &Tensor<T>,
    ) -> (Var, Var, Var) {
        if !first.iter().any(|&f| f) {
            return (h, z, a);
        }
        let keep: Vec<T> = first.iter().map(|&f| if f { T::zero() } else { T::one() }).collect();
        let n = first.len();
        let keep = g.constant(Tensor::matrix(n, 1, keep));
        let h = g.mul_col(h, keep);
        let a = g.mul_col(a, keep);
        let z = g.mul_col(z, keep);
        let zc = z0.cols();
        let mut fill = vec![T::zero(); n * zc];
        for (r, &f) in first.iter().enumerate() {
            if f {
                fill[r * zc..(r + 1) * zc].copy_from_slice(z0.row(0));
            }
        }
        let fill = g.constant(Tensor::matrix(n, zc, fill));
        let z = g.add(z, fill);
        (h, z, a)
    }

    /// Runs the posterior over a batch, starting from `start` (or the initial state).
    ///
    /// Returns per-row `h`, `z` and posterior log-probs stacked time-major.
    pub fn observe_sequence<S: Sampler<T> + ?Sized>(
        &self,
        g: &mut Graph<T>,
        batch: &WorldModelBatch<T>,
        start: Option<&LatentState<T>>,
        sampler: &mut S,
    ) -> Result<(Var, Var, Var)> {
        batch.validate(self.obs_dim, self.action_dim)?;
        let b = batch.batch;
        let z0 = self.initial_z();
        let init = match start {
            Some(s) => s.clone(),
            None => LatentState {
                h: Tensor::zeros(&[b, self.cfg.deter]),
                z: repeat_row(&z0, b),
            },
        };
        let embed_all = self.embed(g, &batch.obs);
        let actions = g.constant(batch.actions.clone());
        let mut h = g.constant(init.h);
        let mut z = g.constant(init.z);
        let (mut hs, mut zs, mut lps) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..batch.length {
            let rows = batch.step_rows(t);
            let a = g.slice_rows(actions, rows.start, rows.end);
            let embed = g.slice_rows(embed_all, rows.start, rows.end);
            let (hr, zr, ar) = self.reset_rows(g, h, z, a, &batch.is_first[rows], &z0);
            let (h2, z2, lp) = self.observe_step(g, hr, zr, ar, embed, sampler);
            h = h2;
            z = z2;
            hs.push(h);
            zs.push(z);
            lps.push(lp);
        }
        Ok((g.concat_rows(&hs), g.concat_rows(&zs), g.concat_rows(&lps)))
    }

    /// World-model loss over a batch.
    pub fn loss<S: Sampler<T> + ?Sized>(
        &self,
        g: &mut Graph<T>,
        batch: &WorldModelBatch<T>,
        sampler: &mut S,
    ) -> Result<WorldModelOutput<T>> {
        let (h, z, post_lp) = self.observe_sequence(g, batch, None, sampler)?;
        let prior_logits = self.prior_logits(g, h);
        let prior_lp = g.group_log_probs(prior_logits, self.cfg.classes, self.unimix());
        let feat = g.concat_cols(&[h, z]);
        let heads = self.heads(g, feat);

        let target = g.constant(batch.obs.map(symlog));
        let diff = g.sub(heads.decoded, target);
        let sq = g.square(diff);
        let per_row = g.sum_rows(sq);
        let dec = g.mean(per_row);

        let n = batch.rows();
        let nb = self.bins.len();
        let mut twohot = vec![T::zero(); n * nb];
        for (r, slot) in twohot.chunks_mut(nb).enumerate() {
            self.bins.encode_into(batch.rewards.data()[r], slot);
        }
        let ce = cross_entropy_rows(g, heads.reward_log_probs, Tensor::matrix(n, nb, twohot));
        let rew = g.mean(ce);

        let bce = g.bce_with_logits(heads.cont_logit, &batch.cont);
        let cont = g.mean(bce);

        let (dyn_, rep) = kl_losses(g, post_lp, prior_lp, T::lit(self.cfg.free_bits));

        let pred = g.add(dec, rew);
        let pred = g.add(pred, cont);
        let wp = g.scale(pred, T::lit(self.cfg.beta_pred));
        let wd = g.scale(dyn_, T::lit(self.cfg.beta_dyn));
        let wr = g.scale(rep, T::lit(self.cfg.beta_rep));
        let total = g.add(wp, wd);
        let total = g.add(total, wr);

        let val = |v: Var| g.value(v).item().as_f64();
        let breakdown = LossBreakdown {
            pred: val(pred),
            decoder: val(dec),
            reward: val(rew),
            cont: val(cont),
            dyn_: val(dyn_),
            rep: val(rep),
            total: val(total),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!("world-model loss {breakdown:?}")));
        }
        Ok(WorldModelOutput {
            loss: total,
            breakdown,
            posterior: LatentState {
                h: g.value(h).clone(),
                z: g.value(z).clone(),
            },
        })
    }

    /// One posterior update for acting in the environment (no gradients).
    pub fn observe_one<S: Sampler<T> + ?Sized>(
        &self,
        prev: &LatentState<T>,
        prev_action: &Tensor<T>,
        obs: &Tensor<T>,
        is_first: bool,
        sampler: &mut S,
    ) -> LatentState<T> {
        let mut g = Graph::inference();
        let start = if is_first {
            self.initial_state(prev.batch())
        } else {
            prev.clone()
        };
        let a = if is_first {
            Tensor::zeros(&[prev.batch(), self.action_dim])
        } else {
            prev_action.clone()
        };
        let h = g.constant(start.h);
        let z = g.constant(start.z);
        let a = g.constant(a);
        let embed = self.embed(&mut g, obs);
        let (h, z, _) = self.observe_step(&mut g, h, z, a, embed, sampler);
        LatentState {
            h: g.value(h).clone(),
            z: g.value(z).clone(),
        }
    }
}

/// Free-bits clamped `(dynamics, representation)` KL losses, averaged over rows.
pub fn kl_losses<T: Scalar>(g: &mut Graph<T>, post_lp: Var, prior_lp: Var, free_bits: T) -> (Var, Var) {
    let post_sg = g.detach(post_lp);
    let prior_sg = g.detach(prior_lp);
    let dyn_kl = kl_rows(g, post_sg, prior_lp);
    let dyn_kl = g.clamp_min(dyn_kl, free_bits);
    let rep_kl = kl_rows(g, post_lp, prior_sg);
    let rep_kl = g.clamp_min(rep_kl, free_bits);
    (g.mean(dyn_kl), g.mean(rep_kl))
}

pub fn repeat_row<T: Scalar>(row: &Tensor<T>, n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * row.cols());
    for _ in 0..n {
        data.extend_from_slice(row.row(0));
    }
    Tensor::matrix(n, row.cols(), data)
}

/// One-hot encoding of per-intersection trits, `[1, 3 * len]`.
pub fn action_one_hot<T: Scalar>(action: &[u8]) -> Tensor<T> {
    let mut data = vec![T::zero(); 3 * action.len()];
    for (i, &a) in action.iter().enumerate() {
        data[3 * i + a as usize] = T::one();
    }
    Tensor::matrix(1, data.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RngSampler;
    use crate::presets::{PresetName, SizePreset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> WorldModelConfig {
        WorldModelConfig {
            deter: 8,
            hidden: 8,
            groups: 2,
            classes: 2,
            depth: 1,
            ..WorldModelConfig::from_preset(&SizePreset::get(PresetName::XXS))
        }
    }

    fn model(cfg: WorldModelConfig) -> WorldModel<f64> {
        WorldModel::new(cfg, 5, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn batch(b: usize, t: usize, seed: u64) -> WorldModelBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * t;
        let obs = (0..n * 5).map(|_| rng.random_range(0.0..60.0)).collect();
        let mut actions = vec![0.0; n * 6];
        for r in 0..n {
            for m in 0..2 {
                actions[r * 6 + 3 * m + rng.random_range(0..3)] = 1.0;
            }
        }
        WorldModelBatch {
            batch: b,
            length: t,
            obs: Tensor::matrix(n, 5, obs),
            actions: Tensor::matrix(n, 6, actions),
            rewards: Tensor::matrix(n, 1, (0..n).map(|_| -rng.random_range(0.0..300.0)).collect()),
            cont: Tensor::matrix(n, 1, vec![1.0; n]),
            is_first: (0..n).map(|r| r < b).collect(),
        }
    }

    #[test]
    fn initial_state_shapes() {
        let wm = model(tiny());
        let s = wm.initial_state(3);
        assert_eq!(s.h.shape(), &[3, 8]);
        assert!(s.h.data().iter().all(|&x| x == 0.0));
        assert_eq!(s.z.shape(), &[3, 4]);
        assert_eq!(s, wm.initial_state(3));
        for g in s.z.data().chunks(2) {
            assert_eq!(g.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn equal_distributions_hit_free_bits_floor() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::matrix(3, 4, vec![0.3, -0.2, 1.0, 0.0, 2.0, 1.0, -1.0, 0.5, 0.0, 0.0, 0.7, 0.1]));
        let lp = g.group_log_probs(logits, 2, 0.01);
        let (d, r) = kl_losses(&mut g, lp, lp, 1.0);
        assert_eq!(g.value(d).item(), 1.0);
        assert_eq!(g.value(r).item(), 1.0);
    }

    #[test]
    fn heads_ranges() {
        let wm = model(tiny());
        let mut g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feat = g.constant(Tensor::matrix(
            4,
            12,
            (0..48).map(|_| rng.random_range(-2.0..2.0)).collect(),
        ));
        let heads = wm.heads(&mut g, feat);
        assert_eq!(g.shape(heads.decoded), (4, 5));
        for row in g.value(heads.reward_log_probs).data().chunks(255) {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        for &l in g.value(heads.cont_logit).data() {
            let p = crate::graph::sigmoid(l);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn loss_is_finite_and_decomposes() {
        let wm = model(tiny());
        let b = batch(3, 4, 1);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = wm.loss(&mut g, &b, &mut RngSampler(&mut rng)).unwrap();
        let l = out.breakdown;
        assert!((l.pred - (l.decoder + l.reward + l.cont)).abs() < 1e-9);
        assert!((l.total - (l.pred + 0.5 * l.dyn_ + 0.1 * l.rep)).abs() < 1e-9);
        assert!(l.dyn_ >= 1.0 && l.rep >= 1.0);
        assert_eq!(out.posterior.h.shape(), &[12, 8]);
    }

    #[test]
    fn posterior_groups_normalized() {
        let wm = model(tiny());
        let b = batch(2, 3, 5);
        let mut g = Graph::new();
        let (_, z, lp) = wm.observe_sequence(&mut g, &b, None, &mut ModeSampler).unwrap();
        for grp in g.value(lp).data().chunks(2) {
            assert!((grp.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for grp in g.value(z).data().chunks(2) {
            assert_eq!(grp.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn reset_matches_truncated_batch() {
        let wm = model(tiny());
        let mut full = batch(2, 5, 9);
        full.is_first = vec![false; 10];
        // Second sequence restarts at t = 2.
        full.is_first[2 * 2 + 1] = true;
        let mut g = Graph::inference();
        let (h_full, _, _) = wm.observe_sequence(&mut g, &full, None, &mut ModeSampler).unwrap();
        let h_full = g.value(h_full).clone();

        let take = |t: &Tensor<f64>| -> Tensor<f64> {
            let rows: Vec<f64> = (2..5).flat_map(|s| t.row(s * 2 + 1).to_vec()).collect();
            Tensor::matrix(3, t.cols(), rows)
        };
        let short = WorldModelBatch {
            batch: 1,
            length: 3,
            obs: take(&full.obs),
            actions: take(&full.actions),
            rewards: take(&full.rewards),
            cont: take(&full.cont),
            is_first: vec![true, false, false],
        };
        let mut g2 = Graph::inference();
        let (h_short, _, _) = wm.observe_sequence(&mut g2, &short, None, &mut ModeSampler).unwrap();
        for (i, s) in (2..5).enumerate() {
            assert_eq!(h_full.row(s * 2 + 1), g2.value(h_short).row(i));
        }
    }

    #[test]
    fn imagine_equals_observe_with_copied_heads() {
        // Posterior input is [h, embed]; zeroing the embed columns of its first layer
        // and copying everything else into the prior makes the two heads agree.
        let mut cfg = tiny();
        cfg.layer_norm = false;
        let mut wm = model(cfg);
        let w = wm.params.index_of("post.h0.w").unwrap();
        let prior_w = wm.params.index_of("prior.h0.w").unwrap();
        let pw = wm.params.value(w).clone();
        let deter = wm.cfg.deter;
        let mut rows = pw.data().to_vec();
        for v in &mut rows[deter * pw.cols()..] {
            *v = 0.0;
        }
        *wm.params.value_mut(w) = Tensor::matrix(pw.rows(), pw.cols(), rows.clone());
        *wm.params.value_mut(prior_w) = Tensor::matrix(deter, pw.cols(), rows[..deter * pw.cols()].to_vec());
        wm.copy_posterior_into_prior();

        let s = wm.initial_state(2);
        let a = action_one_hot::<f64>(&[0, 2]);
        let a = repeat_row(&a, 2);
        let obs = Tensor::matrix(2, 5, vec![3.0; 10]);
        let run = |observe: bool| {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut g = Graph::inference();
            let h = g.constant(s.h.clone());
            let z = g.constant(s.z.clone());
            let av = g.constant(a.clone());
            let (h, z, _) = if observe {
                let e = wm.embed(&mut g, &obs);
                wm.observe_step(&mut g, h, z, av, e, &mut RngSampler(&mut rng))
            } else {
                wm.imagine_step(&mut g, h, z, av, &mut RngSampler(&mut rng))
            };
            (g.value(h).clone(), g.value(z).clone())
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn stop_gradients_isolate_kl_terms() {
        let wm = model(tiny());
        let b = batch(2, 1, 3);
        let cfg = &wm.cfg;
        // Representation loss alone must not reach the prior head.
        let mut g = Graph::new();
        let (h, _, post_lp) = wm.observe_sequence(&mut g, &b, None, &mut ModeSampler).unwrap();
        let pl = wm.prior_logits(&mut g, h);
        let prior_lp = g.group_log_probs(pl, cfg.classes, 0.01);
        let (_, rep) = kl_losses(&mut g, post_lp, prior_lp, 0.0);
        let grads = g.backward(rep).unwrap().for_params(&wm.params);
        for i in wm.prior_param_indices() {
            assert!(grads[i].data().iter().all(|&x| x == 0.0));
        }
        assert!(wm.posterior_param_indices().iter().any(|&i| grads[i].sq_norm() > 0.0));
        // Dynamics loss alone must not reach the posterior head (single step, so no
        // path through the next recurrent update).
        let mut g = Graph::new();
        let (h, _, post_lp) = wm.observe_sequence(&mut g, &b, None, &mut ModeSampler).unwrap();
        let pl = wm.prior_logits(&mut g, h);
        let prior_lp = g.group_log_probs(pl, cfg.classes, 0.01);
        let (dyn_, _) = kl_losses(&mut g, post_lp, prior_lp, 0.0);
        let grads = g.backward(dyn_).unwrap().for_params(&wm.params);
        for i in wm.posterior_param_indices() {
            assert!(grads[i].data().iter().all(|&x| x == 0.0));
        }
        assert!(wm.prior_param_indices().iter().any(|&i| grads[i].sq_norm() > 0.0));
    }
}
