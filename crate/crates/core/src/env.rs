//! The focus-region MDP.
//!
//! State is a coarse feature grid `F` plus a binary history grid `H`. Each step
//! realizes the chosen region, pays a scale-matched weighted recall of the
//! still-uncovered objects it encloses, sets `H` to 1 and multiplies `F` by `κ`
//! over the cells the region maps to.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{encloses, map_region_to_grid, realize_region, GridDims, GridRect, Region, ScaleRange, ZoomSpec};
use crate::policy::{action_distribution, sample_action, Action, Guidance, PolicyDims, PolicyError, PolicyParams};
use crate::scene::{object_scale, Scene};

/// Channels independent of the number of scale candidates: count, weight sum,
/// mean log-scale. One channel per scale range follows.
pub const BASE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Decay rate of the scale-mismatch penalty.
    pub beta: f64,
    /// Feature suppression factor inside generated regions.
    pub kappa: f64,
    /// Minimum fraction of a box inside a region for it to count as enclosed.
    pub enclosure: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { beta: 1.5, kappa: 0.1, enclosure: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 0.0) {
            return Err(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(format!("kappa must lie in [0, 1), got {}", self.kappa));
        }
        if !(self.enclosure > 0.0 && self.enclosure <= 1.0) {
            return Err(format!("enclosure must lie in (0, 1], got {}", self.enclosure));
        }
        Ok(())
    }
}

/// Everything an episode needs besides the scene and the policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub grid: GridDims,
    pub zoom: ZoomSpec,
    pub reward: RewardConfig,
}

impl EnvConfig {
    pub fn channels(&self) -> usize {
        feature_channels(&self.zoom)
    }

    pub fn policy_dims(&self, hidden: Option<usize>) -> PolicyDims {
        PolicyDims::new(self.grid, self.channels(), self.zoom.n_scales(), self.zoom.n_ratios())
            .with_hidden(hidden)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err("grid must have at least one cell".into());
        }
        self.zoom.validate()?;
        self.reward.validate()
    }
}

/// Row-major `cells × channels` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    grid: GridDims,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(grid: GridDims, channels: usize) -> Self {
        Self { grid, channels, data: vec![0.0; grid.cells() * channels] }
    }

    pub fn grid(&self) -> GridDims {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.at_index(self.grid.index(i, j), ch)
    }

    pub fn at_index(&self, cell: usize, ch: usize) -> f64 {
        self.data[cell * self.channels + ch]
    }

    pub fn set_index(&mut self, cell: usize, ch: usize, v: f64) {
        self.data[cell * self.channels + ch] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub features: FeatureGrid,
    pub history: Vec<bool>,
    /// Per object (scene order): already enclosed by an earlier region.
    pub covered: Vec<bool>,
    pub step: usize,
}

impl State {
    pub fn grid(&self) -> GridDims {
        self.features.grid()
    }

    pub fn covered_ids<'s>(&'s self, scene: &'s Scene) -> impl Iterator<Item = u32> + 's {
        scene
            .objects
            .iter()
            .zip(&self.covered)
            .filter(|(_, &c)| c)
            .map(|(o, _)| o.id)
    }
}

/// Scale-consistency factor: 1 inside the desired range, otherwise
/// `max(0, 2 − exp(β·Δs))` with `Δs` the relative overshoot past the violated
/// bound.
pub fn scale_match(s: f64, range: &ScaleRange, beta: f64) -> f64 {
    if range.contains(s) {
        return 1.0;
    }
    let bound = if s < range.min {
        range.min
    } else {
        range.max.expect("an unbounded range cannot be exceeded above")
    };
    let ds = (s - bound).abs() / bound;
    // exp rounding can leave a residue of a few ulps right at the cutoff
    if ds >= std::f64::consts::LN_2 / beta {
        return 0.0;
    }
    (2.0 - (beta * ds).exp()).max(0.0)
}

pub fn update_history(history: &mut [bool], grid: GridDims, z: &GridRect) {
    for (i, j) in z.cells() {
        history[grid.index(i, j)] = true;
    }
}

pub fn update_feature(features: &mut FeatureGrid, z: &GridRect, kappa: f64) {
    let grid = features.grid();
    let c = features.channels();
    for (i, j) in z.cells() {
        let base = grid.index(i, j) * c;
        for v in &mut features.data[base..base + c] {
            *v *= kappa;
        }
    }
}

pub fn feature_channels(zoom: &ZoomSpec) -> usize {
    BASE_CHANNELS + zoom.n_scales()
}

/// Initial features: per cell, objects whose centre falls inside it give
/// (count, Σ 1/s, mean ln s floored at 0, count per desired scale range). Each
/// channel is divided by its maximum over the grid.
pub fn init_state(scene: &Scene, grid: GridDims, zoom: &ZoomSpec) -> State {
    let channels = feature_channels(zoom);
    let mut f = FeatureGrid::zeros(grid, channels);
    let (w, h) = scene.dims();
    let mut log_sum = vec![0.0; grid.cells()];
    for o in &scene.objects {
        let (cx, cy) = o.center();
        let (i, j) = grid.cell_of_point(cx, cy, w, h);
        let k = grid.index(i, j);
        let s = object_scale(o);
        let base = k * channels;
        f.data[base] += 1.0;
        f.data[base + 1] += 1.0 / s;
        log_sum[k] += s.ln().max(0.0);
        for (r, range) in zoom.scale_ranges.iter().enumerate() {
            if range.contains(s) {
                f.data[base + BASE_CHANNELS + r] += 1.0;
            }
        }
    }
    for (k, sum) in log_sum.into_iter().enumerate() {
        let n = f.data[k * channels];
        if n > 0.0 {
            f.data[k * channels + 2] = sum / n;
        }
    }
    for ch in 0..channels {
        let max = (0..grid.cells()).map(|k| f.at_index(k, ch)).fold(0.0, f64::max);
        if max > 0.0 {
            for k in 0..grid.cells() {
                f.data[k * channels + ch] /= max;
            }
        }
    }
    State {
        features: f,
        history: vec![false; grid.cells()],
        covered: vec![false; scene.objects.len()],
        step: 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub region: Region,
    pub reward: f64,
    /// Ids of objects first enclosed by this region.
    pub newly_covered: Vec<u32>,
    /// No uncovered weight remains.
    pub done: bool,
}

/// A scene bound to its reward weights and the MDP configuration.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    scene: &'a Scene,
    cfg: &'a EnvConfig,
    weights: Vec<f64>,
    scales: Vec<f64>,
}

impl<'a> Environment<'a> {
    /// Reward weights `1 / s_i`.
    pub fn new(scene: &'a Scene, cfg: &'a EnvConfig) -> Self {
        Self::with_weights(scene, cfg, scene.default_weights())
    }

    /// Custom reward weights, e.g. `1 − c_i` during collaborative training.
    /// The state features are unaffected.
    pub fn with_weights(scene: &'a Scene, cfg: &'a EnvConfig, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), scene.objects.len(), "one weight per object");
        let scales = scene.objects.iter().map(object_scale).collect();
        Self { scene, cfg, weights, scales }
    }

    pub fn scene(&self) -> &'a Scene {
        self.scene
    }

    pub fn config(&self) -> &'a EnvConfig {
        self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn policy_dims(&self, hidden: Option<usize>) -> PolicyDims {
        self.cfg.policy_dims(hidden)
    }

    pub fn init_state(&self) -> State {
        init_state(self.scene, self.cfg.grid, &self.cfg.zoom)
    }

    pub fn realize(&self, a: &Action) -> Region {
        let (w, h) = self.scene.dims();
        realize_region(a.cell, a.scale, a.ratio, self.cfg.grid, w, h, &self.cfg.zoom)
    }

    /// Weight of objects not yet covered.
    pub fn remaining_weight(&self, state: &State) -> f64 {
        self.weights
            .iter()
            .zip(&state.covered)
            .filter(|(_, &c)| !c)
            .map(|(w, _)| w)
            .sum()
    }

    /// Weighted recall of the region over the uncovered objects. Returns the
    /// reward and the scene indices of the objects it encloses.
    pub fn reward(&self, state: &State, region: &Region, scale_index: usize) -> (f64, Vec<usize>) {
        let range = &self.cfg.zoom.scale_ranges[scale_index];
        let rho = self.cfg.reward.enclosure;
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        let mut enclosed = Vec::new();
        for (k, o) in self.scene.objects.iter().enumerate() {
            if state.covered[k] {
                continue;
            }
            denominator += self.weights[k];
            if encloses(&region.rect, &o.bbox, rho) {
                enclosed.push(k);
                numerator += scale_match(self.scales[k], range, self.cfg.reward.beta) * self.weights[k];
            }
        }
        let r = if denominator > 0.0 { (numerator / denominator).clamp(0.0, 1.0) } else { 0.0 };
        (r, enclosed)
    }

    /// Apply one action: reward, then the history/feature/coverage updates.
    pub fn step(&self, state: &mut State, action: &Action) -> StepOutcome {
        let region = self.realize(action);
        let (reward, enclosed) = self.reward(state, &region, action.scale);
        let (w, h) = self.scene.dims();
        let z = map_region_to_grid(&region.rect, self.cfg.grid, w, h);
        update_history(&mut state.history, self.cfg.grid, &z);
        update_feature(&mut state.features, &z, self.cfg.reward.kappa);
        let newly_covered = enclosed
            .into_iter()
            .map(|k| {
                state.covered[k] = true;
                self.scene.objects[k].id
            })
            .collect();
        state.step += 1;
        StepOutcome { region, reward, newly_covered, done: self.remaining_weight(state) <= 0.0 }
    }

    pub fn guidance<'s>(&'s self, state: &'s State) -> EnvGuidance<'s, 'a> {
        EnvGuidance { env: self, state }
    }
}

/// Exploration hints from the uncovered objects of a state.
pub struct EnvGuidance<'s, 'a> {
    env: &'s Environment<'a>,
    state: &'s State,
}

impl Guidance for EnvGuidance<'_, '_> {
    fn fixation_density(&self) -> Option<Vec<f64>> {
        let grid = self.env.cfg.grid;
        let (w, h) = self.env.scene.dims();
        let mut density = vec![0.0; grid.cells()];
        for (k, o) in self.env.scene.objects.iter().enumerate() {
            if self.state.covered[k] {
                continue;
            }
            let (cx, cy) = o.center();
            let (i, j) = grid.cell_of_point(cx, cy, w, h);
            density[grid.index(i, j)] += self.env.weights[k];
        }
        density.iter().any(|&d| d > 0.0).then_some(density)
    }

    fn scale_histogram(&self, cell: (usize, usize)) -> Vec<f64> {
        let zoom = &self.env.cfg.zoom;
        // footprint uses the ratio closest to square
        let square = (0..zoom.n_ratios())
            .min_by(|&a, &b| (zoom.ratios[a].ln().abs()).total_cmp(&zoom.ratios[b].ln().abs()))
            .unwrap_or(0);
        (0..zoom.n_scales())
            .map(|k| {
                let region = self.env.realize(&Action { cell, scale: k, ratio: square });
                let range = &zoom.scale_ranges[k];
                self.env
                    .scene
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| {
                        !self.state.covered[*i]
                            && range.contains(self.env.scales[*i])
                            && encloses(&region.rect, &o.bbox, self.env.cfg.reward.enclosure)
                    })
                    .map(|(i, _)| self.env.weights[i])
                    .sum()
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Episodes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub mode: RolloutMode,
    pub horizon: usize,
    /// Probability of a guided draw per step (sample mode only).
    pub guidance: f64,
    /// Record `∇ log π` for steps that feed the policy gradient.
    pub record_scores: bool,
    /// Also record scores for guided steps.
    pub score_guided: bool,
    /// Record entropy gradients alongside scores.
    pub record_entropy: bool,
}

impl RolloutOptions {
    pub fn greedy(horizon: usize) -> Self {
        Self {
            mode: RolloutMode::Greedy,
            horizon,
            guidance: 0.0,
            record_scores: false,
            score_guided: false,
            record_entropy: false,
        }
    }

    pub fn sample(horizon: usize, guidance: f64) -> Self {
        Self { mode: RolloutMode::Sample, guidance, record_scores: true, ..Self::greedy(horizon) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub action: Action,
    pub region: Region,
    pub log_prob: f64,
    pub reward: f64,
    pub guided: bool,
    /// Uncovered weight before the step: the reward's denominator.
    pub remaining_weight: f64,
    pub newly_covered: Vec<u32>,
    /// `∇ log π(A_t | S_t)`, present when the step is eligible for the update.
    pub score: Option<Vec<f64>>,
    pub entropy_grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    pub total_return: f64,
}

impl Episode {
    pub fn regions(&self) -> Vec<Region> {
        self.steps.iter().map(|s| s.region).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Roll out up to `horizon` steps, stopping early once no uncovered weight
/// remains. Deterministic given the generator state.
pub fn run_episode<R: Rng + ?Sized>(
    env: &Environment<'_>,
    params: &PolicyParams,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<Episode, PolicyError> {
    let mut state = env.init_state();
    let mut episode = Episode::default();
    for _ in 0..opts.horizon {
        let remaining = env.remaining_weight(&state);
        if remaining <= 0.0 {
            break;
        }
        let dist = action_distribution(params, &state)?;
        let (action, log_prob, guided) = match opts.mode {
            RolloutMode::Greedy => {
                let a = dist.greedy();
                (a, dist.log_prob(&a), false)
            }
            RolloutMode::Sample => {
                let guide = env.guidance(&state);
                let s = sample_action(&dist, &guide, opts.guidance, rng);
                (s.action, s.log_prob, s.guided)
            }
        };
        let eligible = opts.record_scores && (!guided || opts.score_guided);
        let score = eligible.then(|| dist.logprob_grad(&action));
        let entropy_grad = (eligible && opts.record_entropy).then(|| dist.entropy_grad(&action));
        drop(dist);
        let out = env.step(&mut state, &action);
        episode.total_return += out.reward;
        episode.steps.push(EpisodeStep {
            action,
            region: out.region,
            log_prob,
            reward: out.reward,
            guided,
            remaining_weight: remaining,
            newly_covered: out.newly_covered,
            score,
            entropy_grad,
        });
        if out.done {
            break;
        }
    }
    Ok(episode)
}
