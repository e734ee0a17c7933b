//! Factorized fixation / scale / ratio policy.
//!
//! `π(a | S) = p_f(cell | S) · p_s(scale | cell; S) · p_r(ratio | cell, scale; S)`.
//! Each head is a softmax over linear scores of per-cell features. With the
//! optional hidden layer, features first pass through `tanh(W φ)` and a bias
//! unit is appended; all heads then read that embedding instead of `φ`.
//!
//! Parameters live in one flat vector so gradients, clipping and updates are
//! plain vector arithmetic. Layout:
//! `[θ_f (D)] [θ_s (n_s × D)] [θ_r (n_r × (D + n_s))] [W (H × d), hidden only]`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::State;
use crate::geometry::GridDims;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("non-finite {head} logits; parameters have diverged")]
    NonFiniteLogits { head: &'static str },
    #[error("parameter vector has {got} entries, expected {expected}")]
    ParamLength { got: usize, expected: usize },
}

/// `(a_f, a_s, a_r)`: fixation cell `(row, col)`, scale index, ratio index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub cell: (usize, usize),
    pub scale: usize,
    pub ratio: usize,
}

/// Shapes of the policy. `channels` is the number of state feature channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub grid: GridDims,
    pub channels: usize,
    pub n_scales: usize,
    pub n_ratios: usize,
    pub hidden: Option<usize>,
}

impl PolicyDims {
    pub fn new(grid: GridDims, channels: usize, n_scales: usize, n_ratios: usize) -> Self {
        Self { grid, channels, n_scales, n_ratios, hidden: None }
    }

    pub fn with_hidden(mut self, units: Option<usize>) -> Self {
        self.hidden = units;
        self
    }

    /// Raw per-cell feature length: channels and history, their 3×3 and 7×7
    /// means, plus a bias.
    pub fn feature_dim(&self) -> usize {
        3 * (self.channels + 1) + 1
    }

    /// Length of what the heads read.
    pub fn embed_dim(&self) -> usize {
        self.hidden.map_or(self.feature_dim(), |h| h + 1)
    }

    fn fixation_offset(&self) -> usize {
        0
    }

    fn scale_offset(&self) -> usize {
        self.embed_dim()
    }

    fn ratio_offset(&self) -> usize {
        self.scale_offset() + self.n_scales * self.embed_dim()
    }

    fn ratio_row_len(&self) -> usize {
        self.embed_dim() + self.n_scales
    }

    fn hidden_offset(&self) -> usize {
        self.ratio_offset() + self.n_ratios * self.ratio_row_len()
    }

    pub fn param_len(&self) -> usize {
        self.hidden_offset() + self.hidden.map_or(0, |h| h * self.feature_dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub values: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters: every head uniform. With a hidden layer the
    /// first-layer weights are drawn from `N(0, 1/d)` so the embedding is not
    /// degenerate.
    pub fn init(dims: PolicyDims, seed: u64) -> Self {
        let mut values = vec![0.0; dims.param_len()];
        if let Some(h) = dims.hidden {
            let d = dims.feature_dim();
            let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
            let mut rng = rng::stream(seed, "policy-init", 0);
            let off = dims.hidden_offset();
            for v in &mut values[off..off + h * d] {
                *v = normal.sample(&mut rng);
            }
        }
        Self { dims, values }
    }

    pub fn zeros(dims: PolicyDims) -> Self {
        Self { dims, values: vec![0.0; dims.param_len()] }
    }

    pub fn from_values(dims: PolicyDims, values: Vec<f64>) -> Result<Self, PolicyError> {
        if values.len() != dims.param_len() {
            return Err(PolicyError::ParamLength { got: values.len(), expected: dims.param_len() });
        }
        Ok(Self { dims, values })
    }

    pub fn fixation(&self) -> &[f64] {
        let o = self.dims.fixation_offset();
        &self.values[o..o + self.dims.embed_dim()]
    }

    pub fn scale_row(&self, k: usize) -> &[f64] {
        let e = self.dims.embed_dim();
        let o = self.dims.scale_offset() + k * e;
        &self.values[o..o + e]
    }

    pub fn ratio_row(&self, l: usize) -> &[f64] {
        let n = self.dims.ratio_row_len();
        let o = self.dims.ratio_offset() + l * n;
        &self.values[o..o + n]
    }

    fn hidden_row(&self, h: usize) -> &[f64] {
        let d = self.dims.feature_dim();
        let o = self.dims.hidden_offset() + h * d;
        &self.values[o..o + d]
    }

    pub fn fixation_mut(&mut self) -> &mut [f64] {
        let o = self.dims.fixation_offset();
        let e = self.dims.embed_dim();
        &mut self.values[o..o + e]
    }

    pub fn scale_row_mut(&mut self, k: usize) -> &mut [f64] {
        let e = self.dims.embed_dim();
        let o = self.dims.scale_offset() + k * e;
        &mut self.values[o..o + e]
    }

    pub fn ratio_row_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.dims.ratio_row_len();
        let o = self.dims.ratio_offset() + l * n;
        &mut self.values[o..o + n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Features

const POOL_RADII: [usize; 2] = [1, 3];

fn state_maps(state: &State) -> Vec<Vec<f64>> {
    let cells = state.grid().cells();
    let c = state.features.channels();
    let mut maps: Vec<Vec<f64>> = (0..c)
        .map(|ch| (0..cells).map(|k| state.features.at_index(k, ch)).collect())
        .collect();
    maps.push(state.history.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect());
    maps
}

/// Feature vector of one cell, computed directly from the maps.
pub fn cell_features(state: &State, i: usize, j: usize) -> Vec<f64> {
    let grid = state.grid();
    let maps = state_maps(state);
    let mut out: Vec<f64> = maps.iter().map(|m| m[grid.index(i, j)]).collect();
    for r in POOL_RADII {
        let side = (2 * r + 1) as f64;
        for m in &maps {
            let mut sum = 0.0;
            for ii in i.saturating_sub(r)..=(i + r).min(grid.rows - 1) {
                for jj in j.saturating_sub(r)..=(j + r).min(grid.cols - 1) {
                    sum += m[grid.index(ii, jj)];
                }
            }
            out.push(sum / (side * side));
        }
    }
    out.push(1.0);
    out
}

/// Row-major `cells × d` features for every cell, via summed-area tables.
pub fn all_cell_features(state: &State) -> Vec<f64> {
    let grid = state.grid();
    let (rows, cols) = (grid.rows, grid.cols);
    let maps = state_maps(state);
    let n_maps = maps.len();
    let d = 3 * n_maps + 1;
    // integral images with a zero border row/column
    let tables: Vec<Vec<f64>> = maps
        .iter()
        .map(|m| {
            let mut t = vec![0.0; (rows + 1) * (cols + 1)];
            for i in 0..rows {
                let mut row = 0.0;
                for j in 0..cols {
                    row += m[i * cols + j];
                    t[(i + 1) * (cols + 1) + j + 1] = t[i * (cols + 1) + j + 1] + row;
                }
            }
            t
        })
        .collect();
    let rect_sum = |t: &[f64], i0: usize, i1: usize, j0: usize, j1: usize| {
        let w = cols + 1;
        t[(i1 + 1) * w + j1 + 1] - t[i0 * w + j1 + 1] - t[(i1 + 1) * w + j0] + t[i0 * w + j0]
    };
    let mut out = vec![0.0; rows * cols * d];
    for i in 0..rows {
        for j in 0..cols {
            let f = &mut out[(i * cols + j) * d..(i * cols + j + 1) * d];
            for (c, m) in maps.iter().enumerate() {
                f[c] = m[i * cols + j];
            }
            for (p, r) in POOL_RADII.into_iter().enumerate() {
                let side = (2 * r + 1) as f64;
                let (i0, i1) = (i.saturating_sub(r), (i + r).min(rows - 1));
                let (j0, j1) = (j.saturating_sub(r), (j + r).min(cols - 1));
                for (c, t) in tables.iter().enumerate() {
                    f[(p + 1) * n_maps + c] = rect_sum(t, i0, i1, j0, j1) / (side * side);
                }
            }
            f[d - 1] = 1.0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Distribution

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// First index of the maximum; smallest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `∂H/∂logits` for a softmax: `−p_k (ln p_k + H)`.
fn entropy_logit_grad(p: &[f64]) -> Vec<f64> {
    let h = entropy(p);
    p.iter()
        .map(|&x| if x > 0.0 { -x * (x.ln() + h) } else { 0.0 })
        .collect()
}

fn onehot_minus(p: &[f64], k: usize) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, &x)| if i == k { 1.0 - x } else { -x })
        .collect()
}

/// Conditional distributions are evaluated lazily: `p_f` over every cell is
/// materialized, `p_s` and `p_r` only for the cells asked about.
#[derive(Debug, Clone)]
pub struct ActionDistribution<'p> {
    params: &'p PolicyParams,
    features: Vec<f64>,
    hidden: Option<Vec<f64>>,
    embeds: Vec<f64>,
    fixation_logits: Vec<f64>,
    fixation: Vec<f64>,
}

pub fn action_distribution<'p>(
    params: &'p PolicyParams,
    state: &State,
) -> Result<ActionDistribution<'p>, PolicyError> {
    let dims = params.dims;
    let features = all_cell_features(state);
    let d = dims.feature_dim();
    debug_assert_eq!(features.len(), dims.grid.cells() * d);
    let (hidden, embeds) = match dims.hidden {
        None => (None, features.clone()),
        Some(h) => {
            let e = h + 1;
            let cells = dims.grid.cells();
            let mut act = vec![0.0; cells * h];
            let mut emb = vec![0.0; cells * e];
            for c in 0..cells {
                let phi = &features[c * d..(c + 1) * d];
                for u in 0..h {
                    let a = dot(params.hidden_row(u), phi).tanh();
                    act[c * h + u] = a;
                    emb[c * e + u] = a;
                }
                emb[c * e + h] = 1.0;
            }
            (Some(act), emb)
        }
    };
    let e = dims.embed_dim();
    let theta_f = params.fixation();
    let fixation_logits: Vec<f64> = embeds.chunks_exact(e).map(|x| dot(theta_f, x)).collect();
    if fixation_logits.iter().any(|l| !l.is_finite()) {
        return Err(PolicyError::NonFiniteLogits { head: "fixation" });
    }
    let fixation = softmax(&fixation_logits);
    Ok(ActionDistribution { params, features, hidden, embeds, fixation_logits, fixation })
}

impl<'p> ActionDistribution<'p> {
    pub fn dims(&self) -> PolicyDims {
        self.params.dims
    }

    pub fn fixation_probs(&self) -> &[f64] {
        &self.fixation
    }

    pub fn fixation_logits(&self) -> &[f64] {
        &self.fixation_logits
    }

    fn embed(&self, cell: usize) -> &[f64] {
        let e = self.params.dims.embed_dim();
        &self.embeds[cell * e..(cell + 1) * e]
    }

    fn cell_index(&self, cell: (usize, usize)) -> usize {
        self.params.dims.grid.index(cell.0, cell.1)
    }

    pub fn scale_logits(&self, cell: (usize, usize)) -> Vec<f64> {
        let x = self.embed(self.cell_index(cell));
        (0..self.params.dims.n_scales)
            .map(|k| dot(self.params.scale_row(k), x))
            .collect()
    }

    pub fn scale_probs(&self, cell: (usize, usize)) -> Vec<f64> {
        softmax(&self.scale_logits(cell))
    }

    pub fn ratio_logits(&self, cell: (usize, usize), scale: usize) -> Vec<f64> {
        let x = self.embed(self.cell_index(cell));
        let e = x.len();
        (0..self.params.dims.n_ratios)
            .map(|l| {
                let row = self.params.ratio_row(l);
                dot(&row[..e], x) + row[e + scale]
            })
            .collect()
    }

    pub fn ratio_probs(&self, cell: (usize, usize), scale: usize) -> Vec<f64> {
        softmax(&self.ratio_logits(cell, scale))
    }

    pub fn log_prob(&self, a: &Action) -> f64 {
        let pf = self.fixation[self.cell_index(a.cell)];
        let ps = self.scale_probs(a.cell)[a.scale];
        let pr = self.ratio_probs(a.cell, a.scale)[a.ratio];
        pf.ln() + ps.ln() + pr.ln()
    }

    pub fn prob(&self, a: &Action) -> f64 {
        self.log_prob(a).exp()
    }

    /// Sequential argmax: fixation, then scale given fixation, then ratio.
    pub fn greedy(&self) -> Action {
        let grid = self.params.dims.grid;
        let cell = grid.cell(argmax(&self.fixation_logits));
        let scale = argmax(&self.scale_logits(cell));
        let ratio = argmax(&self.ratio_logits(cell, scale));
        Action { cell, scale, ratio }
    }

    /// Ancestral sample from the three heads.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let grid = self.params.dims.grid;
        let cell = grid.cell(sample_index(&self.fixation, rng));
        let scale = sample_index(&self.scale_probs(cell), rng);
        let ratio = sample_index(&self.ratio_probs(cell, scale), rng);
        Action { cell, scale, ratio }
    }

    pub fn entropy(&self, a: &Action) -> f64 {
        entropy(&self.fixation)
            + entropy(&self.scale_probs(a.cell))
            + entropy(&self.ratio_probs(a.cell, a.scale))
    }

    /// `∇_Θ log π(a | S)`, same layout as the parameter vector.
    pub fn logprob_grad(&self, a: &Action) -> Vec<f64> {
        let c = self.cell_index(a.cell);
        let df = onehot_minus(&self.fixation, c);
        let ds = onehot_minus(&self.scale_probs(a.cell), a.scale);
        let dr = onehot_minus(&self.ratio_probs(a.cell, a.scale), a.ratio);
        self.backprop(a, &df, &ds, &dr)
    }

    /// Gradient of `H(p_f) + H(p_s | a_f) + H(p_r | a_f, a_s)`.
    pub fn entropy_grad(&self, a: &Action) -> Vec<f64> {
        let df = entropy_logit_grad(&self.fixation);
        let ds = entropy_logit_grad(&self.scale_probs(a.cell));
        let dr = entropy_logit_grad(&self.ratio_probs(a.cell, a.scale));
        self.backprop(a, &df, &ds, &dr)
    }

    /// Chain logit gradients of the three heads back to the parameters.
    fn backprop(&self, a: &Action, df: &[f64], ds: &[f64], dr: &[f64]) -> Vec<f64> {
        let p = self.params;
        let dims = p.dims;
        let e = dims.embed_dim();
        let chosen = self.cell_index(a.cell);
        let mut g = vec![0.0; dims.param_len()];

        {
            let gf = &mut g[dims.fixation_offset()..dims.fixation_offset() + e];
            for (c, x) in self.embeds.chunks_exact(e).enumerate() {
                if df[c] != 0.0 {
                    for (gi, xi) in gf.iter_mut().zip(x) {
                        *gi += df[c] * xi;
                    }
                }
            }
        }
        let x = self.embed(chosen);
        for (k, &dk) in ds.iter().enumerate() {
            let o = dims.scale_offset() + k * e;
            for (gi, xi) in g[o..o + e].iter_mut().zip(x) {
                *gi += dk * xi;
            }
        }
        let n = dims.ratio_row_len();
        for (l, &dl) in dr.iter().enumerate() {
            let o = dims.ratio_offset() + l * n;
            for (gi, xi) in g[o..o + e].iter_mut().zip(x) {
                *gi += dl * xi;
            }
            g[o + e + a.scale] += dl;
        }

        if let (Some(h), Some(act)) = (dims.hidden, &self.hidden) {
            let d = dims.feature_dim();
            // gradient w.r.t. the chosen cell's embedding from the conditional heads
            let mut cond = vec![0.0; h];
            for (k, &dk) in ds.iter().enumerate() {
                for (u, cu) in cond.iter_mut().enumerate() {
                    *cu += dk * p.scale_row(k)[u];
                }
            }
            for (l, &dl) in dr.iter().enumerate() {
                for (u, cu) in cond.iter_mut().enumerate() {
                    *cu += dl * p.ratio_row(l)[u];
                }
            }
            let theta_f = p.fixation();
            let off = dims.hidden_offset();
            let mut ge = vec![0.0; h];
            for c in 0..dims.grid.cells() {
                let mut any = false;
                for u in 0..h {
                    let mut v = df[c] * theta_f[u];
                    if c == chosen {
                        v += cond[u];
                    }
                    let a_u = act[c * h + u];
                    ge[u] = v * (1.0 - a_u * a_u);
                    any |= ge[u] != 0.0;
                }
                if !any {
                    continue;
                }
                let phi = &self.features[c * d..(c + 1) * d];
                for u in 0..h {
                    if ge[u] == 0.0 {
                        continue;
                    }
                    let row = &mut g[off + u * d..off + (u + 1) * d];
                    for (gi, xi) in row.iter_mut().zip(phi) {
                        *gi += ge[u] * xi;
                    }
                }
            }
        }
        g
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    match WeightedIndex::new(probs) {
        Ok(dist) => dist.sample(rng),
        // all mass underflowed to zero: fall back to the argmax
        Err(_) => argmax(probs),
    }
}

pub fn greedy_action(dist: &ActionDistribution<'_>) -> Action {
    dist.greedy()
}

pub fn logprob_grad(params: &PolicyParams, state: &State, action: &Action) -> Result<Vec<f64>, PolicyError> {
    Ok(action_distribution(params, state)?.logprob_grad(action))
}

// ---------------------------------------------------------------------------
// Guided sampling

/// Object-distribution hints for exploration.
pub trait Guidance {
    /// Uncovered object weight per cell (row-major), or `None` when there is
    /// nothing left to guide towards.
    fn fixation_density(&self) -> Option<Vec<f64>>;
    /// Uncovered object weight, per scale candidate, whose size matches that
    /// candidate's desired range and which lies inside the candidate region
    /// centred on `cell`.
    fn scale_histogram(&self, cell: (usize, usize)) -> Vec<f64>;
}

/// Guidance that never fires.
pub struct NoGuidance;

impl Guidance for NoGuidance {
    fn fixation_density(&self) -> Option<Vec<f64>> {
        None
    }

    fn scale_histogram(&self, _cell: (usize, usize)) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub action: Action,
    /// `log π(action | S)` under the policy, even for guided draws.
    pub log_prob: f64,
    pub guided: bool,
}

/// With probability `1 − ε` sample from the policy; with probability `ε` draw
/// the fixation from the uncovered-weight density and the scale from the
/// per-scale histogram, keeping the policy's ratio head.
pub fn sample_action<R: Rng + ?Sized>(
    dist: &ActionDistribution<'_>,
    guide: &dyn Guidance,
    epsilon: f64,
    rng: &mut R,
) -> SampledAction {
    let grid = dist.dims().grid;
    let guided = if epsilon > 0.0 && rng.random_bool(epsilon.clamp(0.0, 1.0)) {
        guide.fixation_density().and_then(|density| {
            let cell = grid.cell(WeightedIndex::new(&density).ok()?.sample(rng));
            let hist = guide.scale_histogram(cell);
            let scale = match WeightedIndex::new(&hist) {
                Ok(w) => w.sample(rng),
                Err(_) => sample_index(&dist.scale_probs(cell), rng),
            };
            let ratio = sample_index(&dist.ratio_probs(cell, scale), rng);
            Some(Action { cell, scale, ratio })
        })
    } else {
        None
    };
    let (action, guided) = match guided {
        Some(a) => (a, true),
        None => (dist.sample(rng), false),
    };
    SampledAction { action, log_prob: dist.log_prob(&action), guided }
}
