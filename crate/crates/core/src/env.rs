//! Queue-based signal-control environment over the corridor simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{Heading, ScenarioConfig, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Seconds simulated per step (one signal cycle).
    pub control_interval_s: u64,
    /// Observation clip for queue lengths.
    pub queue_upper: u32,
    /// Light-congestion threshold: queues up to this cost nothing.
    pub queue_light: f64,
    /// Heavy-congestion threshold: queues above this cost `heavy_weight` times more.
    pub queue_heavy: f64,
    pub split_lower: u32,
    pub split_upper: u32,
    pub split_step: u32,
    pub heavy_weight: f64,
    pub episode_length_s: u64,
    pub warmup_s: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_interval_s: 100,
            queue_upper: 50,
            queue_light: 10.0,
            queue_heavy: 25.0,
            split_lower: 30,
            split_upper: 70,
            split_step: 2,
            heavy_weight: 10.0,
            episode_length_s: 16_200,
            warmup_s: 1_800,
        }
    }
}

impl EnvConfig {
    pub fn steps_per_episode(&self) -> usize {
        ((self.episode_length_s - self.warmup_s) / self.control_interval_s) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.control_interval_s == 0 || self.episode_length_s <= self.warmup_s {
            return bad("episode must be longer than the warm-up");
        }
        if !(self.episode_length_s - self.warmup_s).is_multiple_of(self.control_interval_s) {
            return bad("episode length after warm-up must be a whole number of intervals");
        }
        if !(0.0 < self.queue_light
            && self.queue_light < self.queue_heavy
            && self.queue_heavy < self.queue_upper as f64)
        {
            return bad("queue thresholds must satisfy 0 < light < heavy < upper");
        }
        if self.split_lower >= self.split_upper || self.split_step == 0 {
            return bad("split bounds or step invalid");
        }
        Ok(())
    }
}

/// Per-intersection adjustment: 0 shortens the split, 1 keeps it, 2 lengthens it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action(pub Vec<u8>);

impl Action {
    pub fn hold(intersections: usize) -> Self {
        Self(vec![1; intersections])
    }

    pub fn validate(&self, intersections: usize) -> Result<()> {
        if self.0.len() != intersections {
            return Err(Error::ShapeMismatch {
                context: "action",
                expected: vec![intersections],
                found: vec![self.0.len()],
            });
        }
        if let Some(a) = self.0.iter().find(|&&a| a > 2) {
            return Err(Error::InvalidConfig(format!("action value {a} not in {{0,1,2}}")));
        }
        Ok(())
    }
}

/// Queues clipped to `[0, queue_upper]` for the main-line links and the splits in force.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub queues: Vec<u32>,
    pub splits: Vec<u32>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.queues.len() + self.splits.len()
    }

    /// Queues then splits, in raw units.
    pub fn encode<T: Scalar>(&self) -> Vec<T> {
        self.queues
            .iter()
            .chain(&self.splits)
            .map(|&v| T::lit(v as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub terms: Vec<f64>,
    pub total: f64,
}

/// Piecewise congestion penalty of one link; boundaries go to the milder branch.
pub fn link_reward(q: f64, weight: f64, cfg: &EnvConfig) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::NegativeQueue(q));
    }
    Ok(if q <= cfg.queue_light {
        0.0
    } else if q <= cfg.queue_heavy {
        -(weight * q)
    } else {
        -(cfg.heavy_weight * weight * q)
    })
}

pub fn corridor_reward(queues: &[usize], weights: &[f64], cfg: &EnvConfig) -> Result<RewardBreakdown> {
    if queues.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            context: "corridor reward",
            expected: vec![weights.len()],
            found: vec![queues.len()],
        });
    }
    let terms = queues
        .iter()
        .zip(weights)
        .map(|(&q, &w)| link_reward(q as f64, w, cfg))
        .collect::<Result<Vec<_>>>()?;
    let total = terms.iter().sum();
    Ok(RewardBreakdown { terms, total })
}

/// New splits after applying `action`, saturating at the bounds.
pub fn apply_action(splits: &[u32], action: &Action, cfg: &EnvConfig) -> Result<Vec<u32>> {
    action.validate(splits.len())?;
    Ok(splits
        .iter()
        .zip(&action.0)
        .map(|(&s, &a)| {
            let moved = match a {
                0 => s.saturating_sub(cfg.split_step),
                1 => s,
                _ => s + cfg.split_step,
            };
            moved.clamp(cfg.split_lower, cfg.split_upper)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    /// False once the episode's last step has been taken.
    pub cont: bool,
    /// Unclipped main-line straight queues after the interval.
    pub queues: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CorridorEnv {
    cfg: EnvConfig,
    scenario: ScenarioConfig,
    weights: Vec<f64>,
    sim: Simulator,
    splits: Vec<u32>,
    step: usize,
}

impl CorridorEnv {
    /// Builds the environment and performs the warm-up (see [`CorridorEnv::reset`]).
    pub fn new(scenario: &ScenarioConfig, cfg: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        cfg.validate()?;
        let sim = Simulator::new(scenario, seed)?;
        let weights = sim
            .geometry()
            .main_links()
            .map(|l| match sim.geometry().links[l].heading {
                Heading::Eastbound => scenario.weights.eastbound,
                _ => scenario.weights.westbound,
            })
            .collect();
        let mut env = Self {
            splits: sim.splits(),
            cfg,
            scenario: scenario.clone(),
            weights,
            sim,
            step: 0,
        };
        let obs = env.reset(seed)?;
        Ok((env, obs))
    }

    /// Fresh simulator, splits at their initial value, warm-up run under fixed signals.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.sim = Simulator::new(&self.scenario, seed)?;
        self.sim.run_interval(self.cfg.warmup_s)?;
        self.splits = self.sim.splits();
        self.step = 0;
        Ok(self.observation())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn link_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intersections(&self) -> usize {
        self.scenario.intersections
    }

    pub fn observation_dim(&self) -> usize {
        self.weights.len() + self.intersections()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.steps_per_episode()
    }

    pub fn splits(&self) -> &[u32] {
        &self.splits
    }

    pub fn observation(&self) -> Observation {
        let upper = self.cfg.queue_upper as usize;
        Observation {
            queues: self
                .sim
                .main_queues()
                .into_iter()
                .map(|q| q.min(upper) as u32)
                .collect(),
            splits: self.splits.clone(),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        let splits = apply_action(&self.splits, action, &self.cfg)?;
        for (m, &s) in splits.iter().enumerate() {
            self.sim.set_split(m, s)?;
        }
        self.splits = splits;
        self.sim.run_interval(self.cfg.control_interval_s)?;
        self.step += 1;
        let queues = self.sim.main_queues();
        let reward = corridor_reward(&queues, &self.weights, &self.cfg)?;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            cont: !self.is_done(),
            queues,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn reward_examples() {
        let c = cfg();
        assert_eq!(link_reward(5.0, 1.0, &c).unwrap(), 0.0);
        assert_eq!(link_reward(20.0, 1.0, &c).unwrap(), -20.0);
        assert_eq!(link_reward(30.0, 1.0, &c).unwrap(), -300.0);
        assert_eq!(link_reward(30.0, 0.0, &c).unwrap(), 0.0);
        assert_eq!(link_reward(10.0, 1.0, &c).unwrap(), 0.0);
        assert_eq!(link_reward(25.0, 1.0, &c).unwrap(), -25.0);
        assert!(matches!(link_reward(-1.0, 1.0, &c), Err(Error::NegativeQueue(_))));
    }

    #[test]
    fn corridor_reward_is_additive() {
        let r = corridor_reward(&[20, 0, 20, 3], &[1.0; 4], &cfg()).unwrap();
        assert_eq!(r.total, -40.0);
        assert_eq!(r.terms, vec![-20.0, 0.0, -20.0, 0.0]);
        let r = corridor_reward(&[0, 0, 90, 90], &[1.0, 1.0, 0.0, 0.0], &cfg()).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn action_application_clamps() {
        let c = cfg();
        assert_eq!(apply_action(&[50], &Action(vec![2]), &c).unwrap(), vec![52]);
        assert_eq!(apply_action(&[70], &Action(vec![2]), &c).unwrap(), vec![70]);
        assert_eq!(apply_action(&[30], &Action(vec![0]), &c).unwrap(), vec![30]);
        assert_eq!(apply_action(&[37, 44], &Action(vec![1, 1]), &c).unwrap(), vec![37, 44]);
        assert!(apply_action(&[50], &Action(vec![3]), &c).is_err());
        assert!(apply_action(&[50, 50], &Action(vec![1]), &c).is_err());
    }

    #[test]
    fn episode_protocol_with_zero_demand() {
        let scenario = ScenarioConfig::scenario1(5).without_demand();
        let (mut env, obs) = CorridorEnv::new(&scenario, cfg(), 3).unwrap();
        assert_eq!(obs.encode::<f64>(), [vec![0.0; 12], vec![50.0; 5]].concat());
        assert_eq!(env.simulator().time(), 1800);
        for i in 1..=144 {
            let r = env.step(&Action(vec![2, 0, 1, 2, 2])).unwrap();
            assert_eq!(r.reward.total, 0.0);
            assert_eq!(r.cont, i < 144);
        }
        assert_eq!(env.simulator().time(), 16_200);
        assert!(matches!(env.step(&Action::hold(5)), Err(Error::EpisodeFinished)));
        assert_eq!(env.splits(), &[70, 30, 50, 70, 70]);
    }

    #[test]
    fn observation_clips_queues() {
        let scenario = ScenarioConfig::scenario1(3);
        let (mut env, _) = CorridorEnv::new(&scenario, cfg(), 0).unwrap();
        let mut seen_clip = false;
        for _ in 0..144 {
            let r = env.step(&Action::hold(3)).unwrap();
            for (&o, &q) in r.observation.queues.iter().zip(&r.queues) {
                assert_eq!(o as usize, q.min(50));
                seen_clip |= q > 50;
            }
        }
        assert!(seen_clip);
    }

    #[test]
    fn config_invariants() {
        assert_eq!(cfg().steps_per_episode(), 144);
        let mut c = cfg();
        c.queue_heavy = 5.0;
        assert!(c.validate().is_err());
    }
}
