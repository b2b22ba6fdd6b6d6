//! Actor-critic trained on imagined latent rollouts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{argmax, cross_entropy_rows, entropy_rows, RngSampler, Sampler};
use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::nn::{Mlp, OutputInit};
use crate::params::{AdamConfig, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::BinGrid;
use crate::world_model::{LatentState, WorldModel};

pub const ACTOR_GROUP: u16 = 1;
pub const CRITIC_GROUP: u16 = 2;
pub const SLOW_CRITIC_GROUP: u16 = 3;

/// Choices per intersection.
pub const ACTION_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy: f64,
    pub unimix: f64,
    pub slow_rate: f64,
    /// Weight of the pull towards the slow critic's prediction.
    pub slow_reg: f64,
    pub norm_decay: f64,
    pub norm_low: f64,
    pub norm_high: f64,
    pub hidden: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub act: Activation,
}

impl BehaviorConfig {
    pub fn new(hidden: usize, depth: usize) -> Self {
        Self {
            horizon: 15,
            gamma: 0.997,
            lambda: 0.95,
            entropy: 3e-4,
            unimix: 0.01,
            slow_rate: 0.02,
            slow_reg: 1.0,
            norm_decay: 0.99,
            norm_low: 0.05,
            norm_high: 0.95,
            hidden,
            depth,
            layer_norm: true,
            act: Activation::Silu,
        }
    }

    fn mlp_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden, self.depth));
        s.push(output);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Explore,
    Eval,
}

/// Factorized policy: one 3-way categorical per intersection.
#[derive(Debug, Clone)]
pub struct Actor<T> {
    pub params: ParamSet<T>,
    mlp: Mlp,
    pub intersections: usize,
    unimix: f64,
}

impl<T: Scalar> Actor<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &BehaviorConfig, feature_dim: usize, intersections: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new(ACTOR_GROUP);
        let mlp = Mlp::new(
            &mut params,
            "actor",
            &cfg.mlp_sizes(feature_dim, intersections * ACTION_CLASSES),
            cfg.act,
            cfg.layer_norm,
            OutputInit::Zero,
            rng,
        );
        Self {
            params,
            mlp,
            intersections,
            unimix: cfg.unimix,
        }
    }

    pub fn logits(&self, g: &mut Graph<T>, feat: Var) -> Var {
        self.mlp.forward(g, &self.params, feat)
    }

    /// Per-class log-probabilities, `[n, 3M]`, after uniform mixing.
    pub fn log_probs(&self, g: &mut Graph<T>, feat: Var) -> Var {
        let logits = self.logits(g, feat);
        g.group_log_probs(logits, ACTION_CLASSES, T::lit(self.unimix))
    }

    /// One-hot actions for each row of `feat`, `[n, 3M]`.
    pub fn act<R: Rng + ?Sized>(&self, feat: &Tensor<T>, mode: ActMode, rng: &mut R) -> Tensor<T> {
        let mut g = Graph::inference();
        let f = g.constant(feat.clone());
        match mode {
            ActMode::Explore => {
                let lp = self.log_probs(&mut g, f);
                let p = g.exp(lp);
                RngSampler(rng).sample(g.value(p), ACTION_CLASSES)
            }
            ActMode::Eval => {
                let logits = self.logits(&mut g, f);
                select_argmax(g.value(logits))
            }
        }
    }
}

/// Argmax one-hot per group of three logits; ties go to the lowest index.
pub fn select_argmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (grp, slot) in logits
        .data()
        .chunks(ACTION_CLASSES)
        .zip(out.chunks_mut(ACTION_CLASSES))
    {
        slot[argmax(grp)] = T::one();
    }
    Tensor::matrix(logits.rows(), logits.cols(), out)
}

/// Trits from a one-hot action row.
pub fn one_hot_to_trits<T: Scalar>(row: &[T]) -> Vec<u8> {
    row.chunks(ACTION_CLASSES).map(|g| argmax(g) as u8).collect()
}

/// Distributional critic over the shared bin grid, plus its slow EMA copy.
#[derive(Debug, Clone)]
pub struct Critic<T> {
    pub params: ParamSet<T>,
    pub slow: ParamSet<T>,
    mlp: Mlp,
    bins: BinGrid<T>,
}

impl<T: Scalar> Critic<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &BehaviorConfig, feature_dim: usize, bins: BinGrid<T>, rng: &mut R) -> Self {
        let mut params = ParamSet::new(CRITIC_GROUP);
        let mlp = Mlp::new(
            &mut params,
            "critic",
            &cfg.mlp_sizes(feature_dim, bins.len()),
            cfg.act,
            cfg.layer_norm,
            OutputInit::Zero,
            rng,
        );
        let slow = params.clone().with_group(SLOW_CRITIC_GROUP);
        Self {
            params,
            slow,
            mlp,
            bins,
        }
    }

    pub fn bins(&self) -> &BinGrid<T> {
        &self.bins
    }

    pub fn log_probs(&self, g: &mut Graph<T>, feat: Var) -> Var {
        let logits = self.mlp.forward(g, &self.params, feat);
        g.group_log_probs(logits, self.bins.len(), T::zero())
    }

    pub fn slow_log_probs(&self, g: &mut Graph<T>, feat: Var) -> Var {
        let logits = self.mlp.forward(g, &self.slow, feat);
        g.group_log_probs(logits, self.bins.len(), T::zero())
    }

    fn mean(&self, lp: &Tensor<T>) -> Vec<T> {
        lp.data()
            .chunks(self.bins.len())
            .map(|row| {
                row.iter()
                    .zip(self.bins.centers())
                    .map(|(&l, &c)| l.exp() * c)
                    .sum()
            })
            .collect()
    }

    /// Expected value per row.
    pub fn values(&self, feat: &Tensor<T>) -> Vec<T> {
        let mut g = Graph::inference();
        let f = g.constant(feat.clone());
        let lp = self.log_probs(&mut g, f);
        self.mean(g.value(lp))
    }

    pub fn update_slow(&mut self, rate: T) -> Result<()> {
        self.slow.ema_from(&self.params, rate)
    }
}

/// Streaming percentile range of returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnNormalizer {
    pub low: f64,
    pub high: f64,
    pub initialized: bool,
    pub decay: f64,
}

impl ReturnNormalizer {
    pub fn new(decay: f64) -> Self {
        Self {
            low: 0.0,
            high: 0.0,
            initialized: false,
            decay,
        }
    }

    pub fn update(&mut self, returns: &[f64], lo_q: f64, hi_q: f64) {
        let lo = percentile(returns, lo_q);
        let hi = percentile(returns, hi_q);
        if self.initialized {
            self.low = self.decay * self.low + (1.0 - self.decay) * lo;
            self.high = self.decay * self.high + (1.0 - self.decay) * hi;
        } else {
            self.low = lo;
            self.high = hi;
            self.initialized = true;
        }
    }

    pub fn scale(&self) -> f64 {
        (self.high - self.low).max(1.0)
    }
}

/// Linear-interpolated percentile (`q` in `[0, 1]`) of unsorted data.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// λ-returns for `n` parallel sequences stored time-major.
///
/// `rewards`, `conts`: `horizon * n`; `values`: `(horizon + 1) * n`.
/// `R_t = r_t + γ c_t ((1 - λ) V_{t+1} + λ R_{t+1})`, `R_H = V_H`. Returns `horizon * n`.
pub fn lambda_returns<T: Scalar>(
    rewards: &[T],
    values: &[T],
    conts: &[T],
    n: usize,
    gamma: T,
    lambda: T,
) -> Result<Vec<T>> {
    let h = rewards.len() / n.max(1);
    if rewards.len() != h * n || conts.len() != h * n || values.len() != (h + 1) * n {
        return Err(Error::ShapeMismatch {
            context: "lambda_returns",
            expected: vec![h * n, (h + 1) * n, h * n],
            found: vec![rewards.len(), values.len(), conts.len()],
        });
    }
    let mut out = vec![T::zero(); h * n];
    let mut next: Vec<T> = values[h * n..].to_vec();
    for t in (0..h).rev() {
        for b in 0..n {
            let i = t * n + b;
            let v1 = values[i + n];
            let r = rewards[i] + gamma * conts[i] * ((T::one() - lambda) * v1 + lambda * next[b]);
            out[i] = r;
            next[b] = r;
        }
    }
    Ok(out)
}

/// Imagined rollout, time-major with `n` rows per step.
#[derive(Debug, Clone)]
pub struct ImaginedTrajectory<T> {
    pub horizon: usize,
    pub n: usize,
    /// Model states `s_0..s_H`, `[(H+1) n, F]`.
    pub feats: Tensor<T>,
    /// One-hot actions taken in `s_0..s_{H-1}`, `[H n, 3M]`.
    pub actions: Tensor<T>,
    /// Predicted reward on reaching `s_{t+1}`, `H n`.
    pub rewards: Vec<T>,
    /// Predicted continue probability of `s_{t+1}`, `H n`.
    pub conts: Vec<T>,
}

impl<T: Scalar> ImaginedTrajectory<T> {
    /// Features of steps `0..H` (the states actions were taken in).
    pub fn acting_feats(&self) -> Tensor<T> {
        self.feats.slice_rows(0, self.horizon * self.n)
    }

    /// `w_0 = 1`, `w_t = prod_{k<t} γ c_k`, per row.
    pub fn weights(&self, gamma: T) -> Vec<T> {
        let n = self.n;
        let mut w = vec![T::one(); self.horizon * n];
        for t in 1..self.horizon {
            for b in 0..n {
                w[t * n + b] = w[(t - 1) * n + b] * gamma * self.conts[(t - 1) * n + b];
            }
        }
        w
    }
}

/// Rolls the prior forward `horizon` steps from `start`, sampling actions from the actor.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    wm: &WorldModel<T>,
    actor: &Actor<T>,
    start: &LatentState<T>,
    horizon: usize,
    rng: &mut R,
) -> ImaginedTrajectory<T> {
    let n = start.batch();
    let mut states = vec![start.clone()];
    let mut actions = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let s = states.last().expect("non-empty");
        let a = actor.act(&s.features(), ActMode::Explore, rng);
        let mut g = Graph::inference();
        let h = g.constant(s.h.clone());
        let z = g.constant(s.z.clone());
        let av = g.constant(a.clone());
        let (h, z, _) = wm.imagine_step(&mut g, h, z, av, &mut RngSampler(rng));
        states.push(LatentState {
            h: g.value(h).clone(),
            z: g.value(z).clone(),
        });
        actions.push(a);
    }
    let feats: Vec<Tensor<T>> = states.iter().map(|s| s.features()).collect();
    let feats = Tensor::concat_rows(&feats.iter().collect::<Vec<_>>());
    let actions = if actions.is_empty() {
        Tensor::zeros(&[0, actor.intersections * ACTION_CLASSES])
    } else {
        Tensor::concat_rows(&actions.iter().collect::<Vec<_>>())
    };
    let (rewards, conts) = if horizon == 0 {
        (Vec::new(), Vec::new())
    } else {
        let mut g = Graph::inference();
        let next = g.constant(feats.slice_rows(n, (horizon + 1) * n));
        let heads = wm.heads(&mut g, next);
        let rewards = wm.decode_bins(g.value(heads.reward_log_probs));
        let conts = g
            .value(heads.cont_logit)
            .data()
            .iter()
            .map(|&l| crate::graph::sigmoid(l))
            .collect();
        (rewards, conts)
    };
    ImaginedTrajectory {
        horizon,
        n,
        feats,
        actions,
        rewards,
        conts,
    }
}

/// REINFORCE loss with stop-gradient advantages and an entropy bonus, weighted per row.
///
/// `advantages` are already normalized; all inputs are constants except the actor.
pub fn actor_loss<T: Scalar>(
    g: &mut Graph<T>,
    actor: &Actor<T>,
    feats: &Tensor<T>,
    actions: &Tensor<T>,
    advantages: &[T],
    weights: &[T],
    entropy_coef: T,
) -> (Var, T) {
    let n = feats.rows();
    let f = g.constant(feats.clone());
    let lp = actor.log_probs(g, f);
    let a = g.constant(actions.clone());
    let chosen = g.mul(lp, a);
    let logp = g.sum_rows(chosen);
    let ent = entropy_rows(g, lp);
    let adv = g.constant(Tensor::matrix(n, 1, advantages.to_vec()));
    let pg = g.mul(logp, adv);
    let bonus = g.scale(ent, entropy_coef);
    let obj = g.add(pg, bonus);
    let w = g.constant(Tensor::matrix(n, 1, weights.to_vec()));
    let obj = g.mul(obj, w);
    let mean = g.mean(obj);
    let loss = g.neg(mean);
    let entropy = g.value(ent).sum() / T::lit(n.max(1) as f64);
    (loss, entropy)
}

/// Two-hot cross-entropy to the returns plus cross-entropy to the slow critic, weighted per row.
pub fn critic_loss<T: Scalar>(
    g: &mut Graph<T>,
    critic: &Critic<T>,
    feats: &Tensor<T>,
    returns: &[T],
    weights: &[T],
    slow_reg: T,
) -> Var {
    let n = feats.rows();
    let nb = critic.bins().len();
    let f = g.constant(feats.clone());
    let lp = critic.log_probs(g, f);
    let mut targets = vec![T::zero(); n * nb];
    for (slot, &r) in targets.chunks_mut(nb).zip(returns) {
        critic.bins().encode_into(r, slot);
    }
    let ce = cross_entropy_rows(g, lp, Tensor::matrix(n, nb, targets));
    let mut slow_g = Graph::inference();
    let sf = slow_g.constant(feats.clone());
    let slow_lp = critic.slow_log_probs(&mut slow_g, sf);
    let slow_p = slow_g.value(slow_lp).map(|l| l.exp());
    let reg = cross_entropy_rows(g, lp, slow_p);
    let reg = g.scale(reg, slow_reg);
    let per_row = g.add(ce, reg);
    let w = g.constant(Tensor::matrix(n, 1, weights.to_vec()));
    let per_row = g.mul(per_row, w);
    g.mean(per_row)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BehaviorMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub return_mean: f64,
    pub scale: f64,
}

/// Actor, critic and return normalizer trained together.
#[derive(Debug, Clone)]
pub struct Behavior<T> {
    pub cfg: BehaviorConfig,
    pub actor: Actor<T>,
    pub critic: Critic<T>,
    pub normalizer: ReturnNormalizer,
}

impl<T: Scalar> Behavior<T> {
    pub fn new<R: Rng + ?Sized>(
        cfg: BehaviorConfig,
        feature_dim: usize,
        intersections: usize,
        bins: BinGrid<T>,
        rng: &mut R,
    ) -> Self {
        let actor = Actor::new(&cfg, feature_dim, intersections, rng);
        let critic = Critic::new(&cfg, feature_dim, bins, rng);
        let normalizer = ReturnNormalizer::new(cfg.norm_decay);
        Self {
            cfg,
            actor,
            critic,
            normalizer,
        }
    }

    /// Imagines from `start` and applies one actor and one critic update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        wm: &WorldModel<T>,
        start: &LatentState<T>,
        actor_opt: &AdamConfig,
        critic_opt: &AdamConfig,
        rng: &mut R,
    ) -> Result<BehaviorMetrics> {
        let cfg = &self.cfg;
        let traj = rollout(wm, &self.actor, start, cfg.horizon, rng);
        let gamma = T::lit(cfg.gamma);
        let values = self.critic.values(&traj.feats);
        let returns = lambda_returns(&traj.rewards, &values, &traj.conts, traj.n, gamma, T::lit(cfg.lambda))?;
        let ret64: Vec<f64> = returns.iter().map(|r| r.as_f64()).collect();
        self.normalizer.update(&ret64, cfg.norm_low, cfg.norm_high);
        let scale = T::lit(self.normalizer.scale());
        let advantages: Vec<T> = returns
            .iter()
            .zip(&values)
            .map(|(&r, &v)| (r - v) / scale)
            .collect();
        let weights = traj.weights(gamma);
        let feats = traj.acting_feats();

        let mut g = Graph::new();
        let (aloss, entropy) = actor_loss(
            &mut g,
            &self.actor,
            &feats,
            &traj.actions,
            &advantages,
            &weights,
            T::lit(cfg.entropy),
        );
        let grads = g.backward(aloss)?.for_params(&self.actor.params);
        let actor_loss_v = g.value(aloss).item().as_f64();
        self.actor.params.adam_step(&grads, actor_opt)?;

        let mut g = Graph::new();
        let closs = critic_loss(&mut g, &self.critic, &feats, &returns, &weights, T::lit(cfg.slow_reg));
        let grads = g.backward(closs)?.for_params(&self.critic.params);
        let critic_loss_v = g.value(closs).item().as_f64();
        self.critic.params.adam_step(&grads, critic_opt)?;
        self.critic.update_slow(T::lit(cfg.slow_rate))?;

        Ok(BehaviorMetrics {
            actor_loss: actor_loss_v,
            critic_loss: critic_loss_v,
            entropy: entropy.as_f64(),
            return_mean: ret64.iter().sum::<f64>() / ret64.len().max(1) as f64,
            scale: self.normalizer.scale(),
        })
    }
}
