//! Interleaved collect/train loop, metrics log and checkpoint resume.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{
    one_hot_to_trits, ActMode, Behavior, BehaviorConfig, BehaviorMetrics, ACTION_CLASSES, ACTOR_GROUP,
    CRITIC_GROUP, SLOW_CRITIC_GROUP,
};
use crate::checkpoint::CheckpointFile;
use crate::dist::{ModeSampler, RngSampler};
use crate::env::{Action, CorridorEnv, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{AdamConfig, ParamSet};
use crate::presets::{PresetName, SizePreset};
use crate::replay::{train_ops_due, ReplayBuffer, Transition};
use crate::scalar::Scalar;
use crate::sim::ScenarioConfig;
use crate::tensor::Tensor;
use crate::world_model::{action_one_hot, LatentState, LossBreakdown, WorldModel, WorldModelConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.cdrm";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTIC_CHECKPOINT_FILE: &str = "diagnostic.cdrm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub world_model: AdamConfig,
    pub actor: AdamConfig,
    pub critic: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            world_model: AdamConfig {
                lr: 1e-3,
                clip: 1000.0,
                ..AdamConfig::default()
            },
            actor: AdamConfig {
                lr: 3e-4,
                eps: 1e-5,
                clip: 100.0,
                ..AdamConfig::default()
            },
            critic: AdamConfig {
                lr: 3e-4,
                eps: 1e-5,
                clip: 100.0,
                ..AdamConfig::default()
            },
        }
    }
}

/// How prefill episodes pick actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillPolicy {
    /// Independent uniform action per intersection and step.
    #[default]
    Uniform,
    /// A uniform random target split per intersection and episode, approached and then held.
    Targets,
}

impl std::str::FromStr for PrefillPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "targets" => Ok(Self::Targets),
            _ => Err(format!("unknown prefill policy {s:?} (uniform, targets)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub preset: PresetName,
    pub world_model: WorldModelConfig,
    pub behavior: BehaviorConfig,
    pub optim: OptimConfig,
    /// Target replayed steps per environment step.
    pub training_ratio: f64,
    pub batch_size: usize,
    pub batch_length: usize,
    pub replay_capacity: usize,
    /// Random-policy episodes collected before the first update.
    pub prefill_episodes: usize,
    #[serde(default)]
    pub prefill_policy: PrefillPolicy,
    pub seed: u64,
    /// Environment steps to collect; rounded up to whole episodes.
    pub budget_env_steps: u64,
    /// Episodes between checkpoints (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    /// When false the metrics log records 0 instead of elapsed time, making it reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl TrainConfig {
    pub fn new(scenario: ScenarioConfig, preset: PresetName) -> Self {
        let p = SizePreset::get(preset);
        Self {
            scenario,
            env: EnvConfig::default(),
            preset,
            world_model: WorldModelConfig::from_preset(&p),
            behavior: BehaviorConfig::new(p.hidden, p.depth),
            optim: OptimConfig::default(),
            training_ratio: 128.0,
            batch_size: 16,
            batch_length: 64,
            replay_capacity: 500_000,
            prefill_episodes: 1,
            prefill_policy: PrefillPolicy::Uniform,
            seed: 0,
            budget_env_steps: 20 * 144,
            checkpoint_every: 10,
            record_wall_clock: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.training_ratio > 0.0 && self.training_ratio.is_finite()) {
            return bad(format!("training ratio must be positive, got {}", self.training_ratio));
        }
        if self.batch_size == 0 || self.batch_length == 0 {
            return bad("batch size and length must be positive".into());
        }
        if self.replay_capacity < self.batch_length {
            return bad("replay capacity must hold at least one sequence".into());
        }
        if self.prefill_episodes == 0 {
            return bad("at least one prefill episode is needed before sampling".into());
        }
        if self.env.steps_per_episode() < self.batch_length && self.prefill_episodes == 1 {
            return bad("batch length exceeds the prefill data".into());
        }
        self.env.validate()?;
        self.scenario.validate()
    }

    pub fn steps_per_episode(&self) -> u64 {
        self.env.steps_per_episode() as u64
    }

    pub fn episodes_in_budget(&self) -> u64 {
        self.budget_env_steps.div_ceil(self.steps_per_episode())
    }

    /// Seed of the simulator for a given training episode.
    pub fn episode_seed(&self, episode: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode
    }
}

/// World model plus actor-critic.
#[derive(Debug, Clone)]
pub struct Agent<T> {
    pub world_model: WorldModel<T>,
    pub behavior: Behavior<T>,
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, obs_dim: usize, rng: &mut R) -> Result<Self> {
        let m = cfg.scenario.intersections;
        let world_model = WorldModel::new(cfg.world_model.clone(), obs_dim, ACTION_CLASSES * m, rng)?;
        let behavior = Behavior::new(
            cfg.behavior.clone(),
            world_model.feature_dim(),
            m,
            world_model.bins().clone(),
            rng,
        );
        Ok(Self { world_model, behavior })
    }

    pub fn intersections(&self) -> usize {
        self.world_model.action_dim / ACTION_CLASSES
    }

    pub fn start(&self) -> PolicyState<T> {
        PolicyState {
            latent: self.world_model.initial_state(1),
            prev_action: Tensor::zeros(&[1, self.world_model.action_dim]),
            first: true,
        }
    }

    /// Filters `obs` into the latent state and picks the next action.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &mut PolicyState<T>,
        obs: &Observation,
        mode: ActMode,
        rng: &mut R,
    ) -> Action {
        let o = Tensor::matrix(1, obs.dim(), obs.encode());
        state.latent = match mode {
            ActMode::Explore => self.world_model.observe_one(
                &state.latent,
                &state.prev_action,
                &o,
                state.first,
                &mut RngSampler(&mut *rng),
            ),
            ActMode::Eval => {
                self.world_model
                    .observe_one(&state.latent, &state.prev_action, &o, state.first, &mut ModeSampler)
            }
        };
        let one_hot = self.behavior.actor.act(&state.latent.features(), mode, rng);
        let action = Action(one_hot_to_trits(one_hot.row(0)));
        state.prev_action = one_hot;
        state.first = false;
        action
    }
}

/// Recurrent acting state carried across one episode.
#[derive(Debug, Clone)]
pub struct PolicyState<T> {
    pub latent: LatentState<T>,
    pub prev_action: Tensor<T>,
    pub first: bool,
}

/// One logged episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_clock_s: f64,
    pub env_steps: u64,
    pub episode: u64,
    pub episode_reward: f64,
    pub wm_loss: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub measured_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "wall_clock_s",
                "env_steps",
                "episode",
                "episode_reward",
                "wm_loss",
                "actor_loss",
                "critic_loss",
                "measured_ratio",
            ])
            .map_err(csv_err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>().map_err(csv_err)?;
        Ok(Self { rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, Default)]
struct LossTotals {
    ops: u64,
    wm: f64,
    actor: f64,
    critic: f64,
}

impl LossTotals {
    fn add(&mut self, wm: &LossBreakdown, b: &BehaviorMetrics) {
        self.ops += 1;
        self.wm += wm.total;
        self.actor += b.actor_loss;
        self.critic += b.critic_loss;
    }

    fn means(&self) -> (f64, f64, f64) {
        if self.ops == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.ops as f64;
        (self.wm / n, self.actor / n, self.critic / n)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    episode: u64,
    train_ops: u64,
    elapsed_s: f64,
    rng: RngState,
    normalizer: crate::behavior::ReturnNormalizer,
    step_counts: [u64; 4],
    replay_env_steps: u64,
    replay_replayed_steps: u64,
    replay_obs_dim: usize,
    replay_action_dim: usize,
    metrics: Vec<MetricsRow>,
}

/// Complete training state. Training runs in `f32`.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    agent: Agent<f32>,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    env: CorridorEnv,
    episode: u64,
    train_ops: u64,
    elapsed_s: f64,
    metrics: MetricsLog,
    last_episode: EpisodeRecord,
}

/// Actions taken and rewards received during the most recent episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (env, obs) = CorridorEnv::new(&cfg.scenario, cfg.env.clone(), cfg.episode_seed(0))?;
        let agent = Agent::new(&cfg, obs.dim(), &mut rng)?;
        let replay = ReplayBuffer::new(cfg.replay_capacity, obs.dim(), agent.world_model.action_dim)?;
        Ok(Self {
            cfg,
            agent,
            replay,
            rng,
            env,
            episode: 0,
            train_ops: 0,
            elapsed_s: 0.0,
            metrics: MetricsLog::default(),
            last_episode: EpisodeRecord::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Agent<f32> {
        &self.agent
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn last_episode(&self) -> &EpisodeRecord {
        &self.last_episode
    }

    pub fn episodes_done(&self) -> u64 {
        self.episode
    }

    pub fn train_ops(&self) -> u64 {
        self.train_ops
    }

    pub fn is_finished(&self) -> bool {
        self.replay.env_steps() >= self.cfg.budget_env_steps
    }

    /// Collects one episode, training on schedule after every appended step.
    pub fn run_episode(&mut self) -> Result<MetricsRow> {
        let started = Instant::now();
        let prefill = self.episode < self.cfg.prefill_episodes as u64;
        let m = self.cfg.scenario.intersections;
        let seed = self.cfg.episode_seed(self.episode);
        let mut obs = self.env.reset(seed)?;
        let mut record = EpisodeRecord {
            seed,
            ..Default::default()
        };
        let mut state = self.agent.start();
        let mut prev_action = vec![0.0f32; ACTION_CLASSES * m];
        let mut reward = 0.0f64;
        let mut episode_reward = 0.0f64;
        let mut losses = LossTotals::default();
        let (b, t) = (self.cfg.batch_size, self.cfg.batch_length);
        let targets: Option<Vec<u32>> = (prefill && self.cfg.prefill_policy == PrefillPolicy::Targets).then(|| {
            let e = &self.cfg.env;
            let slots = (e.split_upper - e.split_lower) / e.split_step;
            (0..m)
                .map(|_| e.split_lower + e.split_step * self.rng.random_range(0..=slots))
                .collect()
        });
        for step in 0..self.cfg.env.steps_per_episode() {
            self.replay.append(&Transition {
                obs: obs.encode(),
                prev_action: prev_action.clone(),
                reward: reward as f32,
                cont: 1.0,
                is_first: step == 0,
            })?;
            if !prefill {
                let due = train_ops_due(
                    self.replay.env_steps(),
                    self.replay.replayed_steps(),
                    self.cfg.training_ratio,
                    b,
                    t,
                );
                for _ in 0..due {
                    let (wm, beh) = self.train_op()?;
                    losses.add(&wm, &beh);
                }
            }
            let action = if let Some(targets) = &targets {
                Action(
                    self.env
                        .splits()
                        .iter()
                        .zip(targets)
                        .map(|(&s, &goal)| match s.cmp(&goal) {
                            std::cmp::Ordering::Greater => 0,
                            std::cmp::Ordering::Equal => 1,
                            std::cmp::Ordering::Less => 2,
                        })
                        .collect(),
                )
            } else if prefill {
                Action((0..m).map(|_| self.rng.random_range(0..ACTION_CLASSES as u8)).collect())
            } else {
                self.agent.act(&mut state, &obs, ActMode::Explore, &mut self.rng)
            };
            prev_action = action_one_hot::<f32>(&action.0).into_data();
            let out = self.env.step(&action)?;
            reward = out.reward.total;
            episode_reward += reward;
            record.actions.push(action);
            record.rewards.push(reward);
            obs = out.observation;
        }
        self.elapsed_s += started.elapsed().as_secs_f64();
        let (wm_loss, actor_loss, critic_loss) = losses.means();
        let row = MetricsRow {
            wall_clock_s: if self.cfg.record_wall_clock { self.elapsed_s } else { 0.0 },
            env_steps: self.replay.env_steps(),
            episode: self.episode,
            episode_reward,
            wm_loss,
            actor_loss,
            critic_loss,
            measured_ratio: self.replay.measured_ratio(),
        };
        self.metrics.rows.push(row);
        self.last_episode = record;
        self.episode += 1;
        Ok(row)
    }

    /// One world-model update followed by one imagination actor-critic update.
    pub fn train_op(&mut self) -> Result<(LossBreakdown, BehaviorMetrics)> {
        let batch = self
            .replay
            .sample::<f32, _>(self.cfg.batch_size, self.cfg.batch_length, &mut self.rng)?;
        let mut g = Graph::new();
        let out = self
            .agent
            .world_model
            .loss(&mut g, &batch, &mut RngSampler(&mut self.rng))?;
        let grads = g.backward(out.loss)?.for_params(&self.agent.world_model.params);
        self.agent.world_model.params.adam_step(&grads, &self.cfg.optim.world_model)?;
        let beh = self.agent.behavior.train_step(
            &self.agent.world_model,
            &out.posterior,
            &self.cfg.optim.actor,
            &self.cfg.optim.critic,
            &mut self.rng,
        )?;
        if !(beh.actor_loss.is_finite() && beh.critic_loss.is_finite()) {
            return Err(Error::NonFinite(format!("behavior losses {beh:?}")));
        }
        self.train_ops += 1;
        Ok((out.breakdown, beh))
    }

    /// Runs to the budget, writing metrics after every episode and checkpoints on cadence.
    ///
    /// A non-finite loss writes a diagnostic checkpoint of the last good state before returning the error.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        while !self.is_finished() {
            let snapshot = out_dir.map(|_| self.clone());
            match self.run_episode() {
                Ok(_) => {}
                Err(e @ Error::NonFinite(_)) => {
                    if let (Some(dir), Some(good)) = (out_dir, snapshot) {
                        good.save_checkpoint(&dir.join(DIAGNOSTIC_CHECKPOINT_FILE))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
            if let Some(dir) = out_dir {
                self.metrics.write_csv(&dir.join(METRICS_FILE))?;
                let every = self.cfg.checkpoint_every as u64;
                if (every > 0 && self.episode.is_multiple_of(every)) || self.is_finished() {
                    self.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        Ok(())
    }

    fn param_sets(&self) -> [(&'static str, &ParamSet<f32>); 4] {
        [
            ("wm", &self.agent.world_model.params),
            ("actor", &self.agent.behavior.actor.params),
            ("critic", &self.agent.behavior.critic.params),
            ("slow", &self.agent.behavior.critic.slow),
        ]
    }

    pub fn to_checkpoint(&self) -> Result<CheckpointFile> {
        let mut file = CheckpointFile::default();
        for (prefix, set) in self.param_sets() {
            for i in 0..set.len() {
                let name = set.name(i);
                let v = set.value(i);
                let (m, s) = set.moments(i);
                file.push(format!("{prefix}/{name}"), v.shape().to_vec(), v.data().to_vec());
                file.push(format!("{prefix}/{name}#m"), m.shape().to_vec(), m.data().to_vec());
                file.push(format!("{prefix}/{name}#v"), s.shape().to_vec(), s.data().to_vec());
            }
        }
        let raw = self.replay.raw();
        let (od, ad) = (self.replay.obs_dim(), self.replay.action_dim());
        let n = self.replay.len();
        file.push("replay/obs", vec![n, od], raw.obs.to_vec());
        file.push("replay/actions", vec![n, ad], raw.actions.to_vec());
        file.push("replay/rewards", vec![n], raw.rewards.to_vec());
        file.push("replay/cont", vec![n], raw.cont.to_vec());
        file.push(
            "replay/is_first",
            vec![n],
            raw.is_first.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
        );
        let sets = self.param_sets();
        let meta = Meta {
            config: self.cfg.clone(),
            episode: self.episode,
            train_ops: self.train_ops,
            elapsed_s: self.elapsed_s,
            rng: RngState::capture(&self.rng),
            normalizer: self.agent.behavior.normalizer,
            step_counts: sets.map(|(_, s)| s.step_count()),
            replay_env_steps: self.replay.env_steps(),
            replay_replayed_steps: self.replay.replayed_steps(),
            replay_obs_dim: od,
            replay_action_dim: ad,
            metrics: self.metrics.rows.clone(),
        };
        file.meta = serde_json::to_string(&meta)?;
        Ok(file)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Rebuilds the exact training state; nothing is returned unless every tensor checks out.
    pub fn from_checkpoint(file: &CheckpointFile) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&file.meta)?;
        let mut t = Self::new(meta.config.clone())?;
        let groups = [
            ("wm", crate::world_model::WORLD_MODEL_GROUP),
            ("actor", ACTOR_GROUP),
            ("critic", CRITIC_GROUP),
            ("slow", SLOW_CRITIC_GROUP),
        ];
        {
            let agent = &mut t.agent;
            let sets: [&mut ParamSet<f32>; 4] = [
                &mut agent.world_model.params,
                &mut agent.behavior.actor.params,
                &mut agent.behavior.critic.params,
                &mut agent.behavior.critic.slow,
            ];
            for ((set, (prefix, group)), &steps) in sets.into_iter().zip(groups).zip(&meta.step_counts) {
                debug_assert_eq!(set.group(), group);
                restore_set(set, prefix, file)?;
                set.set_step_count(steps);
            }
        }
        let get = |name: &str| file.get(name).map(|x| x.data.clone());
        let is_first = get("replay/is_first")?.iter().map(|&x| x != 0.0).collect();
        t.replay = ReplayBuffer::from_raw(
            meta.config.replay_capacity,
            meta.replay_obs_dim,
            meta.replay_action_dim,
            get("replay/obs")?,
            get("replay/actions")?,
            get("replay/rewards")?,
            get("replay/cont")?,
            is_first,
            meta.replay_env_steps,
            meta.replay_replayed_steps,
        )?;
        t.agent.behavior.normalizer = meta.normalizer;
        t.rng = meta.rng.restore()?;
        t.episode = meta.episode;
        t.train_ops = meta.train_ops;
        t.elapsed_s = meta.elapsed_s;
        t.metrics = MetricsLog { rows: meta.metrics };
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&CheckpointFile::load(path)?)
    }
}

fn restore_set(set: &mut ParamSet<f32>, prefix: &str, file: &CheckpointFile) -> Result<()> {
    for i in 0..set.len() {
        let name = format!("{prefix}/{}", set.name(i));
        let shape = set.value(i).shape().to_vec();
        let fetch = |suffix: &str| -> Result<Tensor<f32>> {
            let t = file.get(&format!("{name}{suffix}"))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}{suffix}: shape {:?}, model expects {shape:?}",
                    t.shape
                )));
            }
            Tensor::new(t.shape.clone(), t.data.clone())
        };
        let (v, m, s) = (fetch("")?, fetch("#m")?, fetch("#v")?);
        *set.value_mut(i) = v;
        set.set_moments(i, m, s)?;
    }
    Ok(())
}

/// Trains `cfg` into `out_dir`, resuming from its checkpoint when one exists.
pub fn train_loop(cfg: TrainConfig, out_dir: &Path) -> Result<MetricsLog> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut trainer = if ckpt.exists() {
        let t = Trainer::load_checkpoint(&ckpt)?;
        if t.cfg != cfg {
            return Err(Error::InvalidConfig(format!(
                "{} holds a checkpoint from a different configuration",
                out_dir.display()
            )));
        }
        t.metrics.write_csv(&out_dir.join(METRICS_FILE))?;
        t
    } else {
        Trainer::new(cfg)?
    };
    trainer.run(Some(out_dir))?;
    Ok(trainer.metrics.clone())
}

/// Replay filled by `episodes` uniformly random-action episodes, laid out as the trainer stores them.
pub fn random_policy_replay(cfg: &TrainConfig, episodes: u64, seed: u64) -> Result<ReplayBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.scenario.intersections;
    let (mut env, obs) = CorridorEnv::new(&cfg.scenario, cfg.env.clone(), seed)?;
    let steps = cfg.env.steps_per_episode();
    let mut replay = ReplayBuffer::new(
        cfg.replay_capacity.max(steps * episodes as usize),
        obs.dim(),
        ACTION_CLASSES * m,
    )?;
    for e in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(e))?;
        let mut prev = vec![0.0f32; ACTION_CLASSES * m];
        let mut reward = 0.0;
        for step in 0..steps {
            replay.append(&Transition {
                obs: obs.encode(),
                prev_action: prev,
                reward,
                cont: 1.0,
                is_first: step == 0,
            })?;
            let action = Action((0..m).map(|_| rng.random_range(0..ACTION_CLASSES as u8)).collect());
            prev = action_one_hot::<f32>(&action.0).into_data();
            let out = env.step(&action)?;
            reward = out.reward.total as f32;
            obs = out.observation;
        }
    }
    Ok(replay)
}

/// Standard run-directory paths.
pub fn run_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join(METRICS_FILE), out_dir.join(CHECKPOINT_FILE))
}
