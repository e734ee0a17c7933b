//! REINFORCE over focus-region episodes.
//!
//! Each iteration rolls a batch of sampled episodes, forms the return-to-go of
//! every step and ascends `mean_t ∇log π(A_t|S_t) · (G_t − b)`, where `b` is a
//! scalar moving average of past returns-to-go.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{run_episode, EnvConfig, Environment, Episode, RolloutOptions};
use crate::policy::{PolicyError, PolicyParams};
use crate::rng;
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no scenes to train or evaluate on")]
    NoScenes,
    #[error("non-finite policy gradient at iteration {iteration}; learning rate {lr} is probably too high")]
    NonFiniteGradient { iteration: usize, lr: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

/// Exploration guidance probability, annealed linearly from `start` to `end`
/// over the first `anneal_fraction` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_fraction: f64,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self { start: 0.5, end: 0.0, anneal_fraction: 0.5 }
    }
}

impl GuidanceSchedule {
    pub fn none() -> Self {
        Self { start: 0.0, end: 0.0, anneal_fraction: 0.0 }
    }

    pub fn at(&self, iteration: usize, iterations: usize) -> f64 {
        let horizon = self.anneal_fraction * iterations as f64;
        if horizon <= 0.0 || iteration as f64 >= horizon {
            return self.end;
        }
        let t = iteration as f64 / horizon;
        self.start + (self.end - self.start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub gamma: f64,
    pub baseline_decay: f64,
    pub entropy_coef: f64,
    pub guidance: GuidanceSchedule,
    /// Feed guided steps into the gradient, unweighted.
    pub include_guided: bool,
    /// Episode length `T`.
    pub horizon: usize,
    pub grad_clip: f64,
    /// Width of the optional tanh hidden layer.
    pub hidden_units: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1.0,
            iterations: 2000,
            gamma: 1.0,
            baseline_decay: 0.9,
            entropy_coef: 0.0,
            guidance: GuidanceSchedule::default(),
            include_guided: false,
            horizon: 7,
            grad_clip: 10.0,
            hidden_units: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad(format!("baseline_decay must lie in [0, 1), got {}", self.baseline_decay));
        }
        Ok(())
    }
}

/// Scalar moving-average baseline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub eligible_steps: usize,
    /// Norm of the gradient estimate before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// `G_t = Σ_{t' ≥ t} γ^{t'−t} r_{t'}`.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient estimate from a batch, before clipping. Steps without a recorded
/// score are skipped (but still contribute to returns-to-go).
pub fn policy_gradient(
    episodes: &[Episode],
    param_len: usize,
    cfg: &TrainConfig,
    baseline: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut g = vec![0.0; param_len];
    let mut eligible_returns = Vec::new();
    for ep in episodes {
        let rewards: Vec<f64> = ep.steps.iter().map(|s| s.reward).collect();
        let rtg = returns_to_go(&rewards, cfg.gamma);
        for (step, ret) in ep.steps.iter().zip(rtg) {
            let Some(score) = &step.score else { continue };
            let adv = ret - baseline;
            for (gi, si) in g.iter_mut().zip(score) {
                *gi += adv * si;
            }
            if cfg.entropy_coef != 0.0 {
                if let Some(eg) = &step.entropy_grad {
                    for (gi, ei) in g.iter_mut().zip(eg) {
                        *gi += cfg.entropy_coef * ei;
                    }
                }
            }
            eligible_returns.push(ret);
        }
    }
    let n = eligible_returns.len().max(1) as f64;
    for gi in &mut g {
        *gi /= n;
    }
    (g, eligible_returns)
}

/// One ascent step. The baseline moves toward the batch's mean return-to-go
/// after the parameters are updated.
pub fn reinforce_update(
    params: &mut PolicyParams,
    episodes: &[Episode],
    cfg: &TrainConfig,
    baseline: &mut Baseline,
    iteration: usize,
) -> Result<UpdateStats, TrainError> {
    let (mut g, returns) = policy_gradient(episodes, params.values.len(), cfg, baseline.value);
    if returns.is_empty() {
        return Ok(UpdateStats { eligible_steps: 0, grad_norm: 0.0, clipped: false });
    }
    let grad_norm = norm(&g);
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFiniteGradient { iteration, lr: cfg.learning_rate });
    }
    let clipped = cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip;
    if clipped {
        log::debug!("iteration {iteration}: clipping gradient norm {grad_norm:.3} to {}", cfg.grad_clip);
        let s = cfg.grad_clip / grad_norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    for (p, gi) in params.values.iter_mut().zip(&g) {
        *p += cfg.learning_rate * gi;
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    baseline.value = cfg.baseline_decay * baseline.value + (1.0 - cfg.baseline_decay) * mean_return;
    Ok(UpdateStats { eligible_steps: returns.len(), grad_norm, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_step_reward: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationStats>,
    pub params: PolicyParams,
}

impl TrainReport {
    /// `iteration,mean_return,grad_norm` with 6 decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,mean_return,grad_norm")?;
        for it in &self.iterations {
            writeln!(out, "{},{:.6},{:.6}", it.iteration, it.mean_return, it.grad_norm)?;
        }
        Ok(())
    }
}

/// Per-scene reward weights; `None` means the default `1 / s_i`.
pub type SceneWeights = Option<Vec<Vec<f64>>>;

/// Train fresh parameters.
pub fn train(scenes: &[Scene], env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let params = PolicyParams::init(env_cfg.policy_dims(cfg.hidden_units), cfg.seed);
    train_from(params, scenes, None, env_cfg, cfg)
}

/// Continue training from `params`, optionally with custom reward weights.
pub fn train_from(
    mut params: PolicyParams,
    scenes: &[Scene],
    weights: SceneWeights,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    cfg.validate()?;
    env_cfg.validate().map_err(TrainError::Config)?;
    let envs: Vec<Environment<'_>> = match &weights {
        Some(w) => scenes.iter().zip(w).map(|(s, w)| Environment::with_weights(s, env_cfg, w.clone())).collect(),
        None => scenes.iter().map(|s| Environment::new(s, env_cfg)).collect(),
    };
    let mut baseline = Baseline::default();
    let mut report = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let eps = cfg.guidance.at(it, cfg.iterations);
        let mut pick = rng::stream(cfg.seed, "batch", it as u64);
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| pick.random_range(0..envs.len())).collect();
        let opts = RolloutOptions {
            score_guided: cfg.include_guided,
            record_entropy: cfg.entropy_coef != 0.0,
            ..RolloutOptions::sample(cfg.horizon, eps)
        };
        let episodes: Vec<Episode> = picks
            .par_iter()
            .enumerate()
            .map(|(b, &k)| {
                let mut r = rng::stream(cfg.seed, "rollout", (it * cfg.batch_size + b) as u64);
                run_episode(&envs[k], &params, &opts, &mut r)
            })
            .collect::<Result<_, _>>()?;
        let stats = reinforce_update(&mut params, &episodes, cfg, &mut baseline, it)?;
        let steps: usize = episodes.iter().map(Episode::len).sum();
        let total: f64 = episodes.iter().map(|e| e.total_return).sum();
        report.push(IterationStats {
            iteration: it,
            mean_return: total / episodes.len() as f64,
            mean_step_reward: if steps > 0 { total / steps as f64 } else { 0.0 },
            grad_norm: stats.grad_norm,
            clipped: stats.clipped,
            guidance: eps,
        });
        if it % 100 == 0 {
            log::info!("iteration {it}: mean return {:.4} grad {:.4}", total / episodes.len() as f64, stats.grad_norm);
        }
    }
    Ok(TrainReport { iterations: report, params })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Greedy episodes per scene; population mean and standard deviation of the
/// returns.
pub fn evaluate_policy_reward(
    params: &PolicyParams,
    scenes: &[Scene],
    env_cfg: &EnvConfig,
    horizon: usize,
) -> Result<RewardStats, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    let returns: Vec<f64> = scenes
        .par_iter()
        .map(|s| {
            let env = Environment::new(s, env_cfg);
            // greedy rollouts never draw from the generator
            let mut r = rng::stream(0, "greedy", 0);
            run_episode(&env, params, &RolloutOptions::greedy(horizon), &mut r).map(|e| e.total_return)
        })
        .collect::<Result<_, _>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(RewardStats { mean, std: var.sqrt(), returns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeStep;
    use crate::geometry::{BBox, Region};
    use crate::policy::Action;
    use crate::scene::{synth_scene, SynthSceneConfig};

    fn step(reward: f64, score: Vec<f64>) -> EpisodeStep {
        EpisodeStep {
            action: Action { cell: (0, 0), scale: 0, ratio: 0 },
            region: Region::plain(BBox::new(0.0, 0.0, 1.0, 1.0)),
            log_prob: 0.0,
            reward,
            guided: false,
            remaining_weight: 1.0,
            newly_covered: vec![],
            score: Some(score),
            entropy_grad: None,
        }
    }

    fn dims() -> crate::policy::PolicyDims {
        EnvConfig::default().policy_dims(None)
    }

    #[test]
    fn zero_rewards_leave_params() {
        let mut p = PolicyParams::zeros(dims());
        let n = p.values.len();
        let ep = Episode { steps: vec![step(0.0, vec![1.0; n]), step(0.0, vec![-2.0; n])], total_return: 0.0 };
        let mut b = Baseline::default();
        reinforce_update(&mut p, &[ep], &TrainConfig::default(), &mut b, 0).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_update_is_lr_times_score() {
        let mut p = PolicyParams::zeros(dims());
        let n = p.values.len();
        let score: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin() * 0.01).collect();
        let ep = Episode { steps: vec![step(1.0, score.clone())], total_return: 1.0 };
        let cfg = TrainConfig { learning_rate: 0.5, ..TrainConfig::default() };
        let mut b = Baseline::default();
        reinforce_update(&mut p, &[ep], &cfg, &mut b, 0).unwrap();
        for (v, s) in p.values.iter().zip(&score) {
            assert!((v - 0.5 * s).abs() < 1e-15);
        }
        assert!((b.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn returns_to_go_discounting() {
        assert_eq!(returns_to_go(&[1.0, 0.5, 0.25], 1.0), vec![1.75, 0.75, 0.25]);
        let g = returns_to_go(&[1.0, 1.0], 0.5);
        assert_eq!(g, vec![1.5, 1.0]);
    }

    #[test]
    fn clipping_caps_step() {
        let mut p = PolicyParams::zeros(dims());
        let n = p.values.len();
        let ep = Episode { steps: vec![step(1.0, vec![100.0; n])], total_return: 1.0 };
        let cfg = TrainConfig { learning_rate: 1.0, grad_clip: 10.0, ..TrainConfig::default() };
        let stats = reinforce_update(&mut p, &[ep], &cfg, &mut Baseline::default(), 0).unwrap();
        assert!(stats.clipped);
        assert!((norm(&p.values) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = PolicyParams::zeros(dims());
        let n = p.values.len();
        let ep = Episode { steps: vec![step(1.0, vec![f64::INFINITY; n])], total_return: 1.0 };
        let err = reinforce_update(&mut p, &[ep], &TrainConfig::default(), &mut Baseline::default(), 3);
        assert!(matches!(err, Err(TrainError::NonFiniteGradient { iteration: 3, .. })));
    }

    #[test]
    fn guidance_schedule_anneals() {
        let s = GuidanceSchedule::default();
        assert_eq!(s.at(0, 100), 0.5);
        assert!((s.at(25, 100) - 0.25).abs() < 1e-12);
        assert_eq!(s.at(50, 100), 0.0);
        assert_eq!(s.at(99, 100), 0.0);
    }

    fn tiny_env() -> EnvConfig {
        EnvConfig { grid: crate::geometry::GridDims::new(8, 8), ..EnvConfig::default() }
    }

    #[test]
    fn zero_iterations_keep_initial_params() {
        let scenes = vec![synth_scene(&SynthSceneConfig { seed: 1, ..Default::default() })];
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
        let env = tiny_env();
        let r = train(&scenes, &env, &cfg).unwrap();
        assert_eq!(r.params, PolicyParams::init(env.policy_dims(None), 0));
        assert!(r.iterations.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let scenes: Vec<_> = (0..3).map(|s| synth_scene(&SynthSceneConfig { seed: s, ..Default::default() })).collect();
        let cfg = TrainConfig { iterations: 5, batch_size: 4, seed: 7, ..TrainConfig::default() };
        let env = tiny_env();
        assert_eq!(train(&scenes, &env, &cfg).unwrap(), train(&scenes, &env, &cfg).unwrap());
    }

    #[test]
    fn evaluation_stats() {
        let env = tiny_env();
        let p = PolicyParams::zeros(env.policy_dims(None));
        assert!(matches!(evaluate_policy_reward(&p, &[], &env, 7), Err(TrainError::NoScenes)));
        let scenes: Vec<_> = (0..4).map(|s| synth_scene(&SynthSceneConfig { seed: s, ..Default::default() })).collect();
        let one = evaluate_policy_reward(&p, &scenes[..1], &env, 7).unwrap();
        assert_eq!(one.std, 0.0);
        let a = evaluate_policy_reward(&p, &scenes, &env, 7).unwrap();
        let mut rev = scenes.clone();
        rev.reverse();
        let b = evaluate_policy_reward(&p, &rev, &env, 7).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = TrainReport {
            iterations: vec![IterationStats {
                iteration: 0,
                mean_return: 0.5,
                mean_step_reward: 0.1,
                grad_norm: 1.25,
                clipped: false,
                guidance: 0.5,
            }],
            params: PolicyParams::zeros(dims()),
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,mean_return,grad_norm\n0,0.500000,1.250000\n");
    }
}
