//! Finite-difference checks of the three training losses in f64.

use corridor_core::behavior::{actor_loss, critic_loss, Actor, BehaviorConfig, Critic};
use corridor_core::dist::RelaxedSampler;
use corridor_core::gradcheck::{all_coordinates, check_gradients, sample_coordinates, GradCheckReport};
use corridor_core::presets::{PresetName, SizePreset};
use corridor_core::transforms::{BinGrid, BinGridConfig};
use corridor_core::world_model::{WorldModel, WorldModelBatch, WorldModelConfig};
use corridor_core::{Graph, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-3;

const OBS: usize = 8;
const ACT: usize = 6;

fn batch(b: usize, t: usize, rng: &mut ChaCha8Rng) -> WorldModelBatch<f64> {
    let n = b * t;
    let obs = (0..n * OBS).map(|_| rng.random_range(0.0..50.0)).collect();
    let mut actions = vec![0.0; n * ACT];
    for r in 0..n {
        for m in 0..ACT / 3 {
            actions[r * ACT + 3 * m + rng.random_range(0..3)] = 1.0;
        }
    }
    WorldModelBatch {
        batch: b,
        length: t,
        obs: Tensor::matrix(n, OBS, obs),
        actions: Tensor::matrix(n, ACT, actions),
        rewards: Tensor::matrix(n, 1, (0..n).map(|_| -rng.random_range(0.0..3000.0)).collect()),
        cont: Tensor::matrix(n, 1, (0..n).map(|_| if rng.random_bool(0.9) { 1.0 } else { 0.0 }).collect()),
        // Second sequence restarts mid-window.
        is_first: (0..n).map(|r| r < b || r == (t - 1) * b + 1).collect(),
    }
}

fn wm_check(cfg: WorldModelConfig, per_tensor: Option<usize>) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wm = WorldModel::<f64>::new(cfg, OBS, ACT, &mut rng).unwrap();
    // Zero-initialized biases make the initial latent's argmax an exact tie; check at a generic point.
    jitter(&mut wm.params, &mut rng);
    let data = batch(2, 3, &mut rng);
    let mut g = Graph::new().recording_detached();
    let out = wm.loss(&mut g, &data, &mut RelaxedSampler).unwrap();
    let analytic = g.backward(out.loss).unwrap().for_params(&wm.params);
    let frozen = g.take_detached();
    assert!(!frozen.is_empty());
    let mut params = std::mem::replace(&mut wm.params, ParamSet::new(0));
    let coords = match per_tensor {
        Some(k) => sample_coordinates(&params, k, &mut rng),
        None => all_coordinates(&params),
    };
    check_gradients(&mut params, &analytic, &coords, H, FLOOR, |p| {
        let mut m = wm.clone();
        m.params = p.clone();
        let mut g = Graph::new().replaying_detached(frozen.clone());
        let out = m.loss(&mut g, &data, &mut RelaxedSampler).unwrap();
        g.value(out.loss).item()
    })
}

fn jitter(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for i in 0..params.len() {
        for x in params.value_mut(i).data_mut() {
            *x += 0.1 * (rng.random::<f64>() - 0.5);
        }
    }
}

fn tiny_wm() -> WorldModelConfig {
    WorldModelConfig {
        deter: 6,
        hidden: 5,
        groups: 2,
        classes: 3,
        ..WorldModelConfig::from_preset(&SizePreset::get(PresetName::XXS))
    }
}

#[test]
fn world_model_loss_every_coordinate_tiny() {
    let cfg = WorldModelConfig { free_bits: 0.0, ..tiny_wm() };
    let r = wm_check(cfg, None);
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn world_model_loss_xxs_sampled() {
    for free_bits in [0.0, 1.0] {
        let cfg = WorldModelConfig {
            free_bits,
            ..WorldModelConfig::from_preset(&SizePreset::get(PresetName::XXS))
        };
        let r = wm_check(cfg, Some(4));
        assert!(r.passes(TOL), "free_bits={free_bits}: {r:?}");
    }
}

fn behavior_inputs(feat: usize, n: usize, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, Vec<f64>, Vec<f64>) {
    let feats = Tensor::matrix(n, feat, (0..n * feat).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut actions = vec![0.0; n * ACT];
    for r in 0..n {
        for m in 0..ACT / 3 {
            actions[r * ACT + 3 * m + rng.random_range(0..3)] = 1.0;
        }
    }
    let adv = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    (feats, Tensor::matrix(n, ACT, actions), adv, w)
}

fn actor_check(cfg: &BehaviorConfig, feat: usize, per_tensor: Option<usize>) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut actor = Actor::<f64>::new(cfg, feat, ACT / 3, &mut rng);
    jitter(&mut actor.params, &mut rng);
    let (feats, actions, adv, w) = behavior_inputs(feat, 12, &mut rng);
    let eval = |a: &Actor<f64>, g: &mut Graph<f64>| actor_loss(g, a, &feats, &actions, &adv, &w, 3e-2).0;
    let mut g = Graph::new();
    let l = eval(&actor, &mut g);
    let analytic = g.backward(l).unwrap().for_params(&actor.params);
    let mut params = std::mem::replace(&mut actor.params, ParamSet::new(0));
    let coords = match per_tensor {
        Some(k) => sample_coordinates(&params, k, &mut rng),
        None => all_coordinates(&params),
    };
    check_gradients(&mut params, &analytic, &coords, H, FLOOR, |p| {
        let mut a = actor.clone();
        a.params = p.clone();
        let mut g = Graph::new();
        let l = eval(&a, &mut g);
        g.value(l).item()
    })
}

fn critic_check(cfg: &BehaviorConfig, feat: usize, per_tensor: Option<usize>) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bins = BinGrid::symexp_spaced(&BinGridConfig::default()).unwrap();
    let mut critic = Critic::<f64>::new(cfg, feat, bins, &mut rng);
    jitter(&mut critic.params, &mut rng);
    let (feats, _, _, w) = behavior_inputs(feat, 12, &mut rng);
    let returns: Vec<f64> = (0..12).map(|_| -rng.random_range(0.0..5000.0)).collect();
    let eval = |c: &Critic<f64>, g: &mut Graph<f64>| critic_loss(g, c, &feats, &returns, &w, 1.0);
    let mut g = Graph::new();
    let l = eval(&critic, &mut g);
    let analytic = g.backward(l).unwrap().for_params(&critic.params);
    let mut params = std::mem::replace(&mut critic.params, ParamSet::new(0));
    let coords = match per_tensor {
        Some(k) => sample_coordinates(&params, k, &mut rng),
        None => all_coordinates(&params),
    };
    check_gradients(&mut params, &analytic, &coords, H, FLOOR, |p| {
        let mut c = critic.clone();
        c.params = p.clone();
        let mut g = Graph::new();
        let l = eval(&c, &mut g);
        g.value(l).item()
    })
}

#[test]
fn actor_loss_every_coordinate_tiny() {
    let r = actor_check(&BehaviorConfig::new(4, 1), 5, None);
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn critic_loss_every_coordinate_tiny() {
    let r = critic_check(&BehaviorConfig::new(4, 1), 5, None);
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn actor_and_critic_xxs_sampled() {
    let p = SizePreset::get(PresetName::XXS);
    let cfg = BehaviorConfig::new(p.hidden, p.depth);
    let r = actor_check(&cfg, p.feature_dim(), Some(8));
    assert!(r.passes(TOL), "actor {r:?}");
    let r = critic_check(&cfg, p.feature_dim(), Some(8));
    assert!(r.passes(TOL), "critic {r:?}");
}
