//! Policy evaluation, the fixed-timing base case and queue-trace output.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::ActMode;
use crate::env::{Action, CorridorEnv, EnvConfig};
use crate::error::Result;
use crate::sim::ScenarioConfig;
use crate::trainer::{Agent, Trainer};

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Every action is "hold": splits stay at their initial value.
    FixedSplits,
    /// Greedy actions from a trained agent.
    Agent(&'a Agent<f32>),
}

/// Ground-truth per-step record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub warmup_s: u64,
    pub interval_s: u64,
    pub link_weights: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Unclipped main-line queues after each step.
    pub queues: Vec<Vec<usize>>,
    /// Splits in force during each step.
    pub splits: Vec<Vec<u32>>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn max_queue(&self) -> usize {
        self.queues.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Largest queue on any link with positive weight.
    pub fn max_weighted_queue(&self) -> usize {
        self.queues
            .iter()
            .flat_map(|q| q.iter().zip(&self.link_weights).filter(|(_, &w)| w > 0.0).map(|(&q, _)| q))
            .max()
            .unwrap_or(0)
    }

    /// Simulation time at the end of step `k`.
    pub fn time_s(&self, k: usize) -> u64 {
        self.warmup_s + (k as u64 + 1) * self.interval_s
    }

    /// `time_s,link_id,queue`, one row per step and main-line link.
    pub fn write_queue_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "time_s,link_id,queue")?;
        for (k, qs) in self.queues.iter().enumerate() {
            for (l, q) in qs.iter().enumerate() {
                writeln!(w, "{},{},{}", self.time_s(k), l, q)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `time_s,intersection,split_s`.
    pub fn write_split_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "time_s,intersection,split_s")?;
        for (k, ss) in self.splits.iter().enumerate() {
            for (m, s) in ss.iter().enumerate() {
                writeln!(w, "{},{},{}", self.time_s(k), m, s)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_episode(scenario: &ScenarioConfig, env_cfg: &EnvConfig, policy: Policy<'_>, seed: u64) -> Result<EpisodeTrace> {
    let (mut env, mut obs) = CorridorEnv::new(scenario, env_cfg.clone(), seed)?;
    let m = env.intersections();
    let mut trace = EpisodeTrace {
        seed,
        warmup_s: env_cfg.warmup_s,
        interval_s: env_cfg.control_interval_s,
        link_weights: env.link_weights().to_vec(),
        rewards: Vec::new(),
        queues: Vec::new(),
        splits: Vec::new(),
    };
    let mut state = match policy {
        Policy::Agent(a) => Some(a.start()),
        Policy::FixedSplits => None,
    };
    // Greedy acting draws nothing; the generator only satisfies the signature.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while !env.is_done() {
        let action = match (policy, state.as_mut()) {
            (Policy::Agent(a), Some(s)) => a.act(s, &obs, ActMode::Eval, &mut rng),
            _ => Action::hold(m),
        };
        let out = env.step(&action)?;
        trace.splits.push(env.splits().to_vec());
        trace.rewards.push(out.reward.total);
        trace.queues.push(out.queues);
        obs = out.observation;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    pub max_queue: usize,
    pub max_weighted_queue: usize,
}

impl EvalSummary {
    pub fn from_traces(traces: &[EpisodeTrace]) -> Self {
        let rewards: Vec<f64> = traces.iter().map(|t| t.total_reward()).collect();
        let n = rewards.len();
        Self {
            episodes: n,
            mean_reward: if n == 0 { 0.0 } else { rewards.iter().sum::<f64>() / n as f64 },
            min_reward: if n == 0 { 0.0 } else { rewards.iter().copied().fold(f64::INFINITY, f64::min) },
            max_reward: if n == 0 { 0.0 } else { rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max) },
            max_queue: traces.iter().map(|t| t.max_queue()).max().unwrap_or(0),
            max_weighted_queue: traces.iter().map(|t| t.max_weighted_queue()).max().unwrap_or(0),
            rewards,
        }
    }
}

/// Seed of evaluation episode `i`.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

pub fn evaluate(
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    policy: Policy<'_>,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeTrace>)> {
    let traces = (0..episodes)
        .map(|i| run_episode(scenario, env_cfg, policy, eval_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalSummary::from_traces(&traces), traces))
}

/// Greedy evaluation of a checkpointed agent; `scenario` overrides the one it was trained on.
pub fn evaluate_policy(
    checkpoint: &Path,
    scenario: Option<&ScenarioConfig>,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeTrace>)> {
    let trainer = Trainer::load_checkpoint(checkpoint)?;
    let cfg = trainer.config();
    let scenario = scenario.unwrap_or(&cfg.scenario);
    evaluate(scenario, &cfg.env, Policy::Agent(trainer.agent()), episodes, seed)
}

/// The fixed-split base case.
pub fn baseline(
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeTrace>)> {
    evaluate(scenario, env_cfg, Policy::FixedSplits, episodes, seed)
}
