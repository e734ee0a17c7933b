//! Recall-versus-K curves, COCO-style AP, a pixel-count cost proxy and report
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{pass_magnification, Detection};
use crate::geometry::{encloses, iou, BBox, Region, ZoomSpec};
use crate::scene::{ObjectAnnotation, Scene};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth objects in any scene")]
    NoGroundTruth,
    #[error("{scenes} scenes but {detections} detection lists")]
    LengthMismatch { scenes: usize, detections: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Small,
    Medium,
    Large,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Small, Bucket::Medium, Bucket::Large];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Small => "small",
            Bucket::Medium => "medium",
            Bucket::Large => "large",
        }
    }
}

/// Area thresholds: small below `small_max`, large above `medium_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeBuckets {
    pub small_max: f64,
    pub medium_max: f64,
}

impl Default for SizeBuckets {
    fn default() -> Self {
        Self { small_max: 32.0 * 32.0, medium_max: 96.0 * 96.0 }
    }
}

impl SizeBuckets {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.small_max > 0.0 && self.medium_max > self.small_max) {
            return Err(format!("bucket thresholds must increase: {} / {}", self.small_max, self.medium_max));
        }
        Ok(())
    }

    pub fn classify(&self, area: f64) -> Bucket {
        if area < self.small_max {
            Bucket::Small
        } else if area <= self.medium_max {
            Bucket::Medium
        } else {
            Bucket::Large
        }
    }
}

fn enclosed_by_any(o: &ObjectAnnotation, regions: &[Region], rho: f64) -> bool {
    regions.iter().any(|r| encloses(&r.rect, &o.bbox, rho))
}

/// Counts `(enclosed, total)` for one bucket.
pub fn recall_counts(scene: &Scene, regions: &[Region], bucket: Bucket, buckets: &SizeBuckets, rho: f64) -> (usize, usize) {
    let mut hit = 0;
    let mut total = 0;
    for o in scene.objects.iter().filter(|o| buckets.classify(o.bbox.area()) == bucket) {
        total += 1;
        if enclosed_by_any(o, regions, rho) {
            hit += 1;
        }
    }
    (hit, total)
}

/// Fraction of the bucket's objects enclosed by at least one region; `None`
/// when the bucket is empty.
pub fn recall_at_k(scene: &Scene, regions: &[Region], bucket: Bucket, buckets: &SizeBuckets, rho: f64) -> Option<f64> {
    let (hit, total) = recall_counts(scene, regions, bucket, buckets, rho);
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Pixels processed relative to the native image: the resized whole image
/// plus every resized region.
pub fn cost_proxy(regions: &[Region], zoom: &ZoomSpec, width: f64, height: f64) -> f64 {
    let native = width * height;
    let resized = |r: &BBox| {
        let m = pass_magnification(r, zoom);
        r.area() * m * m
    };
    let whole = resized(&BBox::new(0.0, 0.0, width, height));
    regions.iter().fold(whole, |acc, r| acc + resized(&r.rect)) / native
}

pub const COCO_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub category: u32,
    pub iou_threshold: f64,
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Category-mean AP per threshold, in the order given.
    pub per_threshold: Vec<(f64, f64)>,
    pub curves: Vec<PrCurve>,
}

/// Area under the precision envelope, integrated exactly over recall steps.
pub fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut prev = 0.0;
    let mut area = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        area += (r - prev) * envelope[k];
        prev = r;
    }
    area
}

/// Ranked TP flags for one category at one threshold; each ground truth is
/// claimed at most once, by the highest-IoU unclaimed candidate.
fn ranked_hits(scenes: &[Scene], dets: &[Vec<Detection>], category: u32, threshold: f64) -> (Vec<bool>, usize) {
    let mut ranked: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(s, v)| v.iter().enumerate().filter(|(_, d)| d.category == category).map(move |(k, _)| (s, k)))
        .collect();
    ranked.sort_by(|a, b| dets[b.0][b.1].confidence.total_cmp(&dets[a.0][a.1].confidence).then(a.cmp(b)));
    let mut claimed: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.objects.len()]).collect();
    let n_gt = scenes.iter().flat_map(|s| &s.objects).filter(|o| o.category == category).count();
    let hits = ranked
        .into_iter()
        .map(|(s, k)| {
            let d = &dets[s][k];
            let mut best: Option<(usize, f64)> = None;
            for (g, o) in scenes[s].objects.iter().enumerate() {
                if claimed[s][g] || o.category != category {
                    continue;
                }
                let v = iou(&d.bbox, &o.bbox);
                if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    claimed[s][g] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (hits, n_gt)
}

fn pr_points(hits: &[bool], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    hits.iter()
        .enumerate()
        .map(|(k, &h)| {
            tp += h as usize;
            (tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Mean AP over categories with ground truth and over `thresholds`; AP50 and
/// AP75 at those fixed thresholds. `dets[i]` belongs to `scenes[i]`.
pub fn average_precision(scenes: &[Scene], dets: &[Vec<Detection>], thresholds: &[f64]) -> Result<ApResult, MetricsError> {
    if scenes.len() != dets.len() {
        return Err(MetricsError::LengthMismatch { scenes: scenes.len(), detections: dets.len() });
    }
    let mut categories: Vec<u32> = scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.category)).collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let ap_at = |thr: f64| -> (f64, Vec<PrCurve>) {
        let curves: Vec<PrCurve> = categories
            .iter()
            .map(|&c| {
                let (hits, n_gt) = ranked_hits(scenes, dets, c, thr);
                let points = pr_points(&hits, n_gt);
                let ap = interpolated_ap(&points);
                PrCurve { category: c, iou_threshold: thr, points, ap }
            })
            .collect();
        (curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64, curves)
    };
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    let mut curves = Vec::new();
    for &t in thresholds {
        let (ap, c) = ap_at(t);
        per_threshold.push((t, ap));
        curves.extend(c);
    }
    let ap = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64
    };
    let fixed = |t: f64| {
        per_threshold.iter().find(|p| (p.0 - t).abs() < 1e-12).map(|p| p.1).unwrap_or_else(|| ap_at(t).0)
    };
    Ok(ApResult { ap, ap50: fixed(0.5), ap75: fixed(0.75), per_threshold, curves })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene_id: String,
    pub objects: usize,
    pub regions: usize,
    pub detections: usize,
    pub cost: f64,
    pub recall: [Option<f64>; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// One entry per K = 1..=K_max, buckets in small/medium/large order,
    /// pooled over scenes.
    pub recall_by_k: Vec<[Option<f64>; 3]>,
    /// One entry per K = 0..=K_max, mean over scenes.
    pub cost_by_k: Vec<f64>,
    pub pr_curves: Vec<PrCurve>,
    pub scenes: Vec<SceneRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k_max: usize,
    pub buckets: SizeBuckets,
    pub enclosure: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { k_max: 7, buckets: SizeBuckets::default(), enclosure: 1.0 }
    }
}

/// Builds a report from per-scene regions (in generation order) and final
/// detections.
pub fn evaluate(
    name: &str,
    scenes: &[Scene],
    regions: &[Vec<Region>],
    dets: &[Vec<Detection>],
    zoom: &ZoomSpec,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    if scenes.len() != regions.len() || scenes.len() != dets.len() {
        return Err(MetricsError::LengthMismatch { scenes: scenes.len(), detections: dets.len().min(regions.len()) });
    }
    let ap = average_precision(scenes, dets, &COCO_THRESHOLDS)?;
    let b = &opts.buckets;
    let rho = opts.enclosure;

    // counts[k][bucket] = (hit, total) summed over scenes, k = 1..=k_max
    let per_scene: Vec<Vec<[(usize, usize); 3]>> = scenes
        .par_iter()
        .zip(regions)
        .map(|(s, r)| {
            (1..=opts.k_max)
                .map(|k| {
                    let prefix = &r[..k.min(r.len())];
                    Bucket::ALL.map(|bk| recall_counts(s, prefix, bk, b, rho))
                })
                .collect()
        })
        .collect();
    let recall_by_k = (0..opts.k_max)
        .map(|k| {
            let mut out = [None; 3];
            for (bi, slot) in out.iter_mut().enumerate() {
                let (hit, total) = per_scene.iter().fold((0, 0), |acc, s| (acc.0 + s[k][bi].0, acc.1 + s[k][bi].1));
                *slot = (total > 0).then(|| hit as f64 / total as f64);
            }
            out
        })
        .collect();
    let cost_by_k = (0..=opts.k_max)
        .map(|k| {
            let total: f64 = scenes
                .iter()
                .zip(regions)
                .map(|(s, r)| {
                    let (w, h) = s.dims();
                    cost_proxy(&r[..k.min(r.len())], zoom, w, h)
                })
                .sum();
            if scenes.is_empty() { 0.0 } else { total / scenes.len() as f64 }
        })
        .collect();
    let rows = scenes
        .iter()
        .zip(regions)
        .zip(dets)
        .map(|((s, r), d)| {
            let (w, h) = s.dims();
            SceneRow {
                scene_id: s.source_id.clone(),
                objects: s.objects.len(),
                regions: r.len(),
                detections: d.len(),
                cost: cost_proxy(r, zoom, w, h),
                recall: Bucket::ALL.map(|bk| recall_at_k(s, r, bk, b, rho)),
            }
        })
        .collect();
    Ok(EvalReport {
        name: name.to_string(),
        ap: ap.ap,
        ap50: ap.ap50,
        ap75: ap.ap75,
        recall_by_k,
        cost_by_k,
        pr_curves: ap.curves.into_iter().filter(|c| c.iou_threshold == 0.5 || c.iou_threshold == 0.75).collect(),
        scenes: rows,
    })
}

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn json_opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "null".into())
}

impl EvalReport {
    pub fn k_max(&self) -> usize {
        self.recall_by_k.len()
    }

    pub fn summary_json(&self) -> String {
        let last = self.recall_by_k.last().copied().unwrap_or([None; 3]);
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"name\": {},", serde_json::to_string(&self.name).expect("string serializes"));
        let _ = writeln!(s, "  \"ap\": {:.6},", self.ap * 100.0);
        let _ = writeln!(s, "  \"ap50\": {:.6},", self.ap50 * 100.0);
        let _ = writeln!(s, "  \"ap75\": {:.6},", self.ap75 * 100.0);
        let _ = writeln!(s, "  \"k_max\": {},", self.k_max());
        let _ = writeln!(s, "  \"scenes\": {},", self.scenes.len());
        let _ = writeln!(s, "  \"cost_at_k_max\": {},", json_opt6(self.cost_by_k.last().copied()));
        let _ = writeln!(s, "  \"recall_small_at_k_max\": {},", json_opt6(last[0]));
        let _ = writeln!(s, "  \"recall_medium_at_k_max\": {},", json_opt6(last[1]));
        let _ = writeln!(s, "  \"recall_large_at_k_max\": {}", json_opt6(last[2]));
        s.push_str("}\n");
        s
    }

    pub fn recall_csv(&self) -> String {
        let mut s = String::from("k,bucket,recall\n");
        for (k, row) in self.recall_by_k.iter().enumerate() {
            for (b, v) in Bucket::ALL.iter().zip(row) {
                let _ = writeln!(s, "{},{},{}", k + 1, b.name(), opt6(*v));
            }
        }
        s
    }

    pub fn cost_csv(&self) -> String {
        let mut s = String::from("k,cost\n");
        for (k, c) in self.cost_by_k.iter().enumerate() {
            let _ = writeln!(s, "{k},{c:.6}");
        }
        s
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("category,iou_threshold,recall,precision\n");
        for c in &self.pr_curves {
            for (r, p) in &c.points {
                let _ = writeln!(s, "{},{:.6},{r:.6},{p:.6}", c.category, c.iou_threshold);
            }
        }
        s
    }

    pub fn scenes_csv(&self) -> String {
        let mut s = String::from("scene_id,objects,regions,detections,cost,recall_small,recall_medium,recall_large\n");
        for r in &self.scenes {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{},{},{}",
                r.scene_id,
                r.objects,
                r.regions,
                r.detections,
                r.cost,
                opt6(r.recall[0]),
                opt6(r.recall[1]),
                opt6(r.recall[2])
            );
        }
        s
    }
}

/// Writes `summary.json`, `recall_vs_k.csv`, `cost_vs_k.csv`, `pr_curves.csv`,
/// `per_scene.csv` and the full report as `report.json` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), MetricsError> {
    let io = |path: PathBuf| move |source| MetricsError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let full = serde_json::to_string_pretty(report).expect("report serializes");
    let files = [
        ("summary.json", report.summary_json()),
        ("recall_vs_k.csv", report.recall_csv()),
        ("cost_vs_k.csv", report.cost_csv()),
        ("pr_curves.csv", report.pr_csv()),
        ("per_scene.csv", report.scenes_csv()),
        ("report.json", full),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(path.clone()))?;
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<EvalReport, MetricsError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|source| MetricsError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| MetricsError::Io { path, source: std::io::Error::other(e) })
}
