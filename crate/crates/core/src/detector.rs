//! Parametric detector simulator, zoomed multi-region inference and the
//! collaborative loop between the region policy and the detector.
//!
//! The simulated detector sees each ground-truth object at its magnified size
//! `s_eff = s·m` and reports it with confidence
//! `logistic((s_eff − (μ + δ_bin)) / τ)`, where `δ_bin` is a per-scale-bin skill
//! offset that detector finetuning lowers. Boxes are jittered with a noise
//! that shrinks with magnification, and false positives arrive as a Poisson
//! process over the resized input.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{run_episode, EnvConfig, Environment, RolloutOptions};
use crate::geometry::{iou, nms, BBox, Region, ZoomSpec};
use crate::policy::PolicyParams;
use crate::rng;
use crate::scene::{object_scale, Scene};
use crate::training::{train_from, TrainConfig, TrainError, TrainReport};

pub const SKILL_BINS: usize = 8;
/// Lower edge of the first effective-scale bin; bins double in width.
const FIRST_BIN_EDGE: f64 = 4.0;
pub const MERGE_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub category: u32,
    pub matched_gt: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Effective side length at which confidence is 0.5.
    pub midpoint: f64,
    /// Logistic width in pixels.
    pub steepness: f64,
    /// Box noise σ = coeff·s / m.
    pub jitter: f64,
    /// False positives per megapixel of resized input.
    pub fp_rate: f64,
    /// Midpoint shift per effective-scale bin; negative is better.
    pub skill_offsets: [f64; SKILL_BINS],
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            midpoint: 24.0,
            steepness: 6.0,
            jitter: 0.05,
            fp_rate: 0.5,
            skill_offsets: [0.0; SKILL_BINS],
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.steepness > 0.0) {
            return Err(format!("steepness must be positive, got {}", self.steepness));
        }
        if !(self.fp_rate >= 0.0) {
            return Err(format!("fp_rate must be non-negative, got {}", self.fp_rate));
        }
        if !(self.jitter >= 0.0) {
            return Err(format!("jitter must be non-negative, got {}", self.jitter));
        }
        Ok(())
    }

    /// Skill offset used for an effective size. Skill carries over to larger
    /// sizes (running minimum over bins), which keeps confidence monotone in
    /// `s_eff`.
    pub fn offset_for(&self, s_eff: f64) -> f64 {
        let b = scale_bin(s_eff);
        self.skill_offsets[..=b].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn confidence(&self, s_eff: f64) -> f64 {
        logistic((s_eff - (self.midpoint + self.offset_for(s_eff))) / self.steepness)
    }

}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-spaced bin: `[4·2^b, 4·2^(b+1))`, clamped to the first and last bin.
pub fn scale_bin(s_eff: f64) -> usize {
    if !(s_eff > FIRST_BIN_EDGE) {
        return 0;
    }
    ((s_eff / FIRST_BIN_EDGE).log2().floor() as usize).min(SKILL_BINS - 1)
}

/// Magnification of a pass over `rect`, clamped at 1.
pub fn pass_magnification(rect: &BBox, zoom: &ZoomSpec) -> f64 {
    let raw = zoom.target_short_edge / rect.short_edge();
    if raw < 1.0 {
        log::debug!("magnification {raw:.3} for {rect:?} clamped to 1");
    }
    raw.max(1.0)
}

/// Noise stream for one pass, keyed by scene and region geometry so that
/// region order does not matter and identical regions see identical noise.
fn pass_rng(seed: u64, scene: &Scene, rect: &BBox) -> rng::StreamRng {
    let key = format!(
        "detector/{}/{:016x}{:016x}{:016x}{:016x}",
        scene.source_id,
        rect.x.to_bits(),
        rect.y.to_bits(),
        rect.w.to_bits(),
        rect.h.to_bits()
    );
    rng::stream(seed, &key, 0)
}

/// One detector pass over `region`. Detection ids are left at 0.
pub fn simulate_detect<R: Rng + ?Sized>(
    scene: &Scene,
    region: &Region,
    zoom: &ZoomSpec,
    det: &DetectorConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let rect = region.rect;
    let m = pass_magnification(&rect, zoom);
    let mut out = Vec::new();
    for o in &scene.objects {
        let (cx, cy) = o.center();
        if !rect.contains_point(cx, cy) {
            continue;
        }
        let s = object_scale(o);
        let confidence = det.confidence(s * m);
        let sigma = det.jitter * s / m;
        let mut noise = || if sigma > 0.0 { Normal::new(0.0, sigma).unwrap().sample(rng) } else { 0.0 };
        let b = o.bbox;
        let jittered = BBox::new(b.x + noise(), b.y + noise(), (b.w + noise()).max(1.0), (b.h + noise()).max(1.0));
        let Some(bbox) = clip_into(&jittered, &rect) else { continue };
        out.push(Detection { id: 0, bbox, confidence, category: o.category, matched_gt: None });
    }

    let megapixels = rect.w * m * rect.h * m / 1e6;
    let lambda = det.fp_rate * megapixels;
    let n_fp = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(rng) as usize } else { 0 };
    for _ in 0..n_fp {
        // 8..48 px in the resized input
        let w = (rng.random_range(8.0..48.0) / m).min(rect.w);
        let h = (rng.random_range(8.0..48.0) / m).min(rect.h);
        let x = rect.x + rng.random_range(0.0..=1.0) * (rect.w - w);
        let y = rect.y + rng.random_range(0.0..=1.0) * (rect.h - h);
        let category = if scene.objects.is_empty() {
            1
        } else {
            scene.objects[rng.random_range(0..scene.objects.len())].category
        };
        out.push(Detection {
            id: 0,
            bbox: BBox::new(x, y, w, h),
            confidence: rng.random_range(0.05..0.5),
            category,
            matched_gt: None,
        });
    }
    out
}

fn clip_into(b: &BBox, region: &BBox) -> Option<BBox> {
    let x0 = b.x.max(region.x);
    let y0 = b.y.max(region.y);
    let x1 = b.right().min(region.right());
    let y1 = b.bottom().min(region.bottom());
    (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Whole-image pass plus one pass per region, merged by per-category NMS at
/// IoU 0.5. Ids are assigned in pass order before merging: the whole image
/// first, then regions sorted by geometry, so the result does not depend on
/// the order regions are given in.
pub fn full_pipeline(scene: &Scene, regions: &[Region], zoom: &ZoomSpec, det: &DetectorConfig) -> Vec<Detection> {
    let (w, h) = scene.dims();
    let key = |r: &Region| [r.rect.x, r.rect.y, r.rect.w, r.rect.h];
    let mut sorted: Vec<Region> = regions.to_vec();
    sorted.sort_by(|a, b| {
        key(a).iter().zip(key(b)).map(|(x, y)| x.total_cmp(&y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.dedup_by(|a, b| a.rect == b.rect);
    let passes: Vec<Region> = std::iter::once(Region::whole_image(w, h)).chain(sorted).collect();
    let per_pass: Vec<Vec<Detection>> = passes
        .par_iter()
        .map(|r| simulate_detect(scene, r, zoom, det, &mut pass_rng(det.seed, scene, &r.rect)))
        .collect();
    let mut all: Vec<Detection> = per_pass.into_iter().flatten().collect();
    for (k, d) in all.iter_mut().enumerate() {
        d.id = k;
    }
    nms(&all, MERGE_IOU)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Per object (scene order): confidence of its matched detection, 0 if none.
    pub best_confidence: Vec<f64>,
    /// Per detection (input order): matched object id.
    pub matched: Vec<Option<u32>>,
}

/// Greedy matching in descending confidence: each detection takes the
/// highest-IoU unmatched object of its category with IoU ≥ `iou_threshold`.
pub fn match_detections(scene: &Scene, dets: &[Detection], iou_threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].confidence.total_cmp(&dets[a].confidence).then(dets[a].id.cmp(&dets[b].id))
    });
    let mut taken = vec![false; scene.objects.len()];
    let mut best_confidence = vec![0.0; scene.objects.len()];
    let mut matched = vec![None; dets.len()];
    for di in order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (k, o) in scene.objects.iter().enumerate() {
            if taken[k] || o.category != d.category {
                continue;
            }
            let v = iou(&d.bbox, &o.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        if let Some((k, _)) = best {
            taken[k] = true;
            best_confidence[k] = d.confidence;
            matched[di] = Some(scene.objects[k].id);
        }
    }
    Matching { best_confidence, matched }
}

/// Collaborative reward weights `1 − c_i`.
pub fn collaborative_reweight(confidences: &[f64]) -> Vec<f64> {
    confidences.iter().map(|c| (1.0 - c).clamp(0.0, 1.0)).collect()
}

/// Objects seen per effective-scale bin by passes over `regions`.
pub fn exposure_histogram(scene: &Scene, regions: &[Region], zoom: &ZoomSpec) -> [f64; SKILL_BINS] {
    let mut hist = [0.0; SKILL_BINS];
    for r in regions {
        let m = pass_magnification(&r.rect, zoom);
        for o in &scene.objects {
            let (cx, cy) = o.center();
            if r.rect.contains_point(cx, cy) {
                hist[scale_bin(object_scale(o) * m)] += 1.0;
            }
        }
    }
    hist
}

/// Simulated finetuning: lower each bin's offset by `η` times its share of
/// the exposure, never below `−μ/2`.
pub fn detector_finetune(det: &DetectorConfig, exposure: &[f64; SKILL_BINS], eta: f64) -> DetectorConfig {
    let total: f64 = exposure.iter().sum();
    let mut out = det.clone();
    if total <= 0.0 {
        return out;
    }
    let floor = -det.midpoint / 2.0;
    for (d, e) in out.skill_offsets.iter_mut().zip(exposure) {
        *d = (*d - eta * e / total).max(floor);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtConfig {
    /// Regions per scene at inference.
    pub k: usize,
    pub policy_iters: usize,
    /// Learning rate for policy finetuning; the training config's rate when
    /// `None`.
    pub policy_lr: Option<f64>,
    /// Finetuning strength for the detector.
    pub detector_eta: f64,
    pub rounds: usize,
    /// Score objects with the policy's regions as well as the whole image.
    /// Off by default: difficulty is what the detector sees on the image.
    pub score_with_regions: bool,
}

impl Default for CtConfig {
    fn default() -> Self {
        Self { k: 7, policy_iters: 300, policy_lr: None, detector_eta: 6.0, rounds: 1, score_with_regions: false }
    }
}

/// Greedy regions of the policy, at most `k`.
pub fn greedy_regions(params: &PolicyParams, scene: &Scene, env_cfg: &EnvConfig, k: usize) -> Result<Vec<Region>, TrainError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let env = Environment::new(scene, env_cfg);
    let mut r = rng::stream(0, "greedy", 0);
    Ok(run_episode(&env, params, &RolloutOptions::greedy(k), &mut r)?.regions())
}

/// Total weight of the objects enclosed by at least one region.
pub fn captured_weight(scene: &Scene, regions: &[Region], weights: &[f64], rho: f64) -> f64 {
    scene
        .objects
        .iter()
        .zip(weights)
        .filter(|(o, _)| regions.iter().any(|r| crate::geometry::encloses(&r.rect, &o.bbox, rho)))
        .map(|(_, w)| w)
        .sum()
}

/// Per-object detection confidences from the full pipeline with the policy's
/// greedy regions.
pub fn pipeline_confidences(
    params: &PolicyParams,
    det: &DetectorConfig,
    scenes: &[Scene],
    env_cfg: &EnvConfig,
    k: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    scenes
        .par_iter()
        .map(|s| {
            let regions = greedy_regions(params, s, env_cfg, k)?;
            let dets = full_pipeline(s, &regions, &env_cfg.zoom, det);
            Ok(match_detections(s, &dets, MERGE_IOU).best_confidence)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtRound {
    pub params: PolicyParams,
    pub detector: DetectorConfig,
    /// Confidences the round's reweighting was based on.
    pub confidences: Vec<Vec<f64>>,
    pub train_report: TrainReport,
    pub exposure: [f64; SKILL_BINS],
}

/// One collaborative round: detect with the current pair, reweight objects by
/// `1 − c`, finetune the policy on those weights, then finetune the detector on
/// the new policy's regions.
pub fn collaborative_round(
    params: &PolicyParams,
    det: &DetectorConfig,
    scenes: &[Scene],
    env_cfg: &EnvConfig,
    train_cfg: &TrainConfig,
    ct: &CtConfig,
) -> Result<CtRound, TrainError> {
    let scored = if ct.score_with_regions { ct.k } else { 0 };
    let confidences = pipeline_confidences(params, det, scenes, env_cfg, scored)?;
    let weights: Vec<Vec<f64>> = confidences.iter().map(|c| collaborative_reweight(c)).collect();
    let cfg = TrainConfig {
        iterations: ct.policy_iters,
        learning_rate: ct.policy_lr.unwrap_or(train_cfg.learning_rate),
        guidance: crate::training::GuidanceSchedule::none(),
        ..train_cfg.clone()
    };
    let report = train_from(params.clone(), scenes, Some(weights), env_cfg, &cfg)?;
    let mut exposure = [0.0; SKILL_BINS];
    for s in scenes {
        let regions = greedy_regions(&report.params, s, env_cfg, ct.k)?;
        for (e, x) in exposure.iter_mut().zip(exposure_histogram(s, &regions, &env_cfg.zoom)) {
            *e += x;
        }
    }
    let detector = detector_finetune(det, &exposure, ct.detector_eta);
    Ok(CtRound { params: report.params.clone(), detector, confidences, train_report: report, exposure })
}

/// One JSON object per line: `scene_id, x, y, w, h, confidence, category`.
pub fn write_detections_jsonl<W: Write>(mut out: W, scene_id: &str, dets: &[Detection]) -> std::io::Result<()> {
    let id = serde_json::to_string(scene_id).expect("string serializes");
    for d in dets {
        writeln!(
            out,
            "{{\"scene_id\":{id},\"x\":{:.6},\"y\":{:.6},\"w\":{:.6},\"h\":{:.6},\"confidence\":{:.6},\"category\":{}}}",
            d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.confidence, d.category
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub category: u32,
}

pub fn parse_detection_line(line: &str) -> Result<DetectionRecord, serde_json::Error> {
    serde_json::from_str(line)
}
