//! Annotated scenes: loading, JSON emission and synthetic generation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::rng;

pub const MIN_SCENE_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_id}: line {line}: {msg}")]
    Annotation { source_id: String, line: usize, msg: String },
    #[error("{source_id}: invalid scene json: {source}")]
    Json { source_id: String, source: serde_json::Error },
    #[error("scene {width}x{height} is below the {MIN_SCENE_SIDE}px minimum")]
    TooSmall { width: u32, height: u32 },
    #[error("duplicate object id {0}")]
    DuplicateId(u32),
    #[error("object {0} has a non-positive box")]
    DegenerateBox(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: u32,
    pub bbox: BBox,
    pub category: u32,
}

impl ObjectAnnotation {
    pub fn new(id: u32, bbox: BBox, category: u32) -> Self {
        Self { id, bbox, category }
    }

    pub fn scale(&self) -> f64 {
        object_scale(self)
    }

    pub fn weight(&self) -> f64 {
        object_weight(self)
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// Geometric-mean side length, `sqrt(w·h)`.
pub fn object_scale(obj: &ObjectAnnotation) -> f64 {
    (obj.bbox.w * obj.bbox.h).sqrt()
}

/// Reward weight of an object, `1 / scale`.
pub fn object_weight(obj: &ObjectAnnotation) -> f64 {
    1.0 / object_scale(obj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectAnnotation>,
    pub source_id: String,
}

impl Scene {
    pub fn new(
        width: u32,
        height: u32,
        objects: Vec<ObjectAnnotation>,
        source_id: impl Into<String>,
    ) -> Result<Self, SceneError> {
        if width < MIN_SCENE_SIDE || height < MIN_SCENE_SIDE {
            return Err(SceneError::TooSmall { width, height });
        }
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id) {
                return Err(SceneError::DuplicateId(o.id));
            }
            if !(o.bbox.w > 0.0 && o.bbox.h > 0.0) {
                return Err(SceneError::DegenerateBox(o.id));
            }
        }
        Ok(Self { width, height, objects, source_id: source_id.into() })
    }

    pub fn dims(&self) -> (f64, f64) {
        (f64::from(self.width), f64::from(self.height))
    }

    pub fn rect(&self) -> BBox {
        BBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Default reward weights, `1 / s_i` per object.
    pub fn default_weights(&self) -> Vec<f64> {
        self.objects.iter().map(object_weight).collect()
    }
}

// ---------------------------------------------------------------------------
// VisDrone annotations

/// VisDrone categories that are not real objects: ignored regions and "others".
const VISDRONE_EXCLUDED: [u32; 2] = [0, 11];

/// Parse VisDrone `left,top,width,height,score,category,truncation,occlusion`
/// lines. Returns the scene and the number of boxes dropped because nothing
/// was left after clipping.
pub fn parse_visdrone(
    text: &str,
    width: u32,
    height: u32,
    source_id: &str,
) -> Result<(Scene, usize), SceneError> {
    let (fw, fh) = (f64::from(width), f64::from(height));
    let mut objects = Vec::new();
    let mut skipped = 0;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SceneError::Annotation {
            source_id: source_id.to_string(),
            line: line_no,
            msg,
        };
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        // some exports end every line with a trailing comma
        if fields.last() == Some(&"") {
            fields.pop();
        }
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64, SceneError> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{name}: cannot parse {:?}", fields[k])))
        };
        let int = |k: usize, name: &str| -> Result<i64, SceneError> {
            fields[k]
                .parse::<i64>()
                .map_err(|_| err(format!("{name}: cannot parse {:?}", fields[k])))
        };
        let bbox = BBox::new(num(0, "left")?, num(1, "top")?, num(2, "width")?, num(3, "height")?);
        int(4, "score")?;
        let category = int(5, "category")?;
        int(6, "truncation")?;
        int(7, "occlusion")?;
        let category =
            u32::try_from(category).map_err(|_| err(format!("negative category {category}")))?;
        if VISDRONE_EXCLUDED.contains(&category) {
            continue;
        }
        match bbox.clip_to(fw, fh) {
            Some(b) => objects.push(ObjectAnnotation { id: objects.len() as u32, bbox: b, category }),
            None => skipped += 1,
        }
    }
    Ok((Scene::new(width, height, objects, source_id)?, skipped))
}

pub fn load_visdrone(path: &Path, width: u32, height: u32) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (scene, skipped) = parse_visdrone(&text, width, height, &source_id)?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} boxes with no area after clipping", path.display());
    }
    Ok(scene)
}

// ---------------------------------------------------------------------------
// Scene JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectJson {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    category: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    width: u32,
    height: u32,
    objects: Vec<ObjectJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
}

/// Parse `{width, height, objects: [{x, y, w, h, category}]}`. Ids follow
/// array order; boxes are clipped and empty ones dropped.
pub fn parse_scene_json(text: &str, default_source_id: &str) -> Result<Scene, SceneError> {
    let doc: SceneJson = serde_json::from_str(text).map_err(|source| SceneError::Json {
        source_id: default_source_id.to_string(),
        source,
    })?;
    let (fw, fh) = (f64::from(doc.width), f64::from(doc.height));
    let objects = doc
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            BBox::new(o.x, o.y, o.w, o.h)
                .clip_to(fw, fh)
                .map(|bbox| ObjectAnnotation { id: i as u32, bbox, category: o.category })
        })
        .collect();
    let source_id = doc.source_id.unwrap_or_else(|| default_source_id.to_string());
    Scene::new(doc.width, doc.height, objects, source_id)
}

pub fn load_scene_json(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_scene_json(&text, &stem)
}

pub fn emit_scene_json(scene: &Scene) -> String {
    let doc = SceneJson {
        width: scene.width,
        height: scene.height,
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectJson { x: o.bbox.x, y: o.bbox.y, w: o.bbox.w, h: o.bbox.h, category: o.category })
            .collect(),
        source_id: Some(scene.source_id.clone()),
    };
    serde_json::to_string(&doc).expect("scene json serialization cannot fail")
}

/// Load every `*.json` scene in a directory, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>, SceneError> {
    let io = |source| SceneError::Io { path: dir.to_path_buf(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scene_json(p)).collect()
}

// ---------------------------------------------------------------------------
// Synthetic scenes

pub const SMALL_CATEGORY: u32 = 1;
pub const MEDIUM_CATEGORY: u32 = 4;
pub const LARGE_CATEGORY: u32 = 9;

/// Parameters of a synthetic large scene: Gaussian clusters of small/medium
/// objects, optional clusters of very small "hard" objects and large objects
/// scattered uniformly. Side ranges are `(min, max)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSceneConfig {
    pub width: u32,
    pub height: u32,
    pub clusters: usize,
    pub objects_per_cluster: usize,
    /// Standard deviation of member offsets from the cluster centre.
    pub cluster_spread: f64,
    pub small_side: (f64, f64),
    pub medium_side: (f64, f64),
    pub large_side: (f64, f64),
    /// Share of cluster members drawn from the medium range.
    pub medium_fraction: f64,
    /// Scattered large objects, as a fraction of the clustered object count.
    pub large_scatter_fraction: f64,
    pub hard_clusters: usize,
    pub hard_side: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 960,
            clusters: 3,
            objects_per_cluster: 12,
            cluster_spread: 35.0,
            small_side: (8.0, 24.0),
            medium_side: (32.0, 64.0),
            large_side: (100.0, 160.0),
            medium_fraction: 0.15,
            large_scatter_fraction: 0.15,
            hard_clusters: 0,
            hard_side: (4.0, 7.0),
            seed: 0,
        }
    }
}

impl SynthSceneConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width < MIN_SCENE_SIDE || self.height < MIN_SCENE_SIDE {
            return Err(format!("synthetic scene {}x{} too small", self.width, self.height));
        }
        for (name, (lo, hi)) in [
            ("small_side", self.small_side),
            ("medium_side", self.medium_side),
            ("large_side", self.large_side),
            ("hard_side", self.hard_side),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(format!("{name} must be a positive range, got ({lo}, {hi})"));
            }
        }
        if !(self.cluster_spread >= 0.0) {
            return Err("cluster_spread must be non-negative".into());
        }
        for (name, f) in [
            ("medium_fraction", self.medium_fraction),
            ("large_scatter_fraction", self.large_scatter_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Deterministic synthetic scene; a pure function of the config.
pub fn synth_scene(cfg: &SynthSceneConfig) -> Scene {
    let mut rng = rng::stream(cfg.seed, "scene", 0);
    let (fw, fh) = (f64::from(cfg.width), f64::from(cfg.height));
    let mut objects: Vec<ObjectAnnotation> = Vec::new();

    let place = |objects: &mut Vec<ObjectAnnotation>, cx: f64, cy: f64, w: f64, h: f64, category: u32| {
        let w = w.min(fw);
        let h = h.min(fh);
        let x = (cx - 0.5 * w).clamp(0.0, fw - w);
        let y = (cy - 0.5 * h).clamp(0.0, fh - h);
        let id = objects.len() as u32;
        objects.push(ObjectAnnotation { id, bbox: BBox::new(x, y, w, h), category });
    };

    let margin_x = (2.0 * cfg.cluster_spread).min(0.25 * fw);
    let margin_y = (2.0 * cfg.cluster_spread).min(0.25 * fh);
    let offset = Normal::new(0.0, cfg.cluster_spread.max(f64::MIN_POSITIVE))
        .expect("finite spread");

    let cluster = |rng: &mut rng::StreamRng, objects: &mut Vec<ObjectAnnotation>, hard: bool| {
        let cx = uniform(rng, (margin_x, fw - margin_x));
        let cy = uniform(rng, (margin_y, fh - margin_y));
        for _ in 0..cfg.objects_per_cluster {
            let dx = offset.sample(rng);
            let dy = offset.sample(rng);
            let medium = !hard && rng.random_bool(cfg.medium_fraction);
            let (range, category) = if hard {
                (cfg.hard_side, SMALL_CATEGORY)
            } else if medium {
                (cfg.medium_side, MEDIUM_CATEGORY)
            } else {
                (cfg.small_side, SMALL_CATEGORY)
            };
            let w = uniform(rng, range);
            let h = uniform(rng, range);
            place(objects, cx + dx, cy + dy, w, h, category);
        }
    };

    for _ in 0..cfg.clusters {
        cluster(&mut rng, &mut objects, false);
    }
    for _ in 0..cfg.hard_clusters {
        cluster(&mut rng, &mut objects, true);
    }

    let clustered = objects.len();
    let n_large = (cfg.large_scatter_fraction * clustered as f64).round() as usize;
    for _ in 0..n_large {
        let w = uniform(&mut rng, cfg.large_side);
        let h = uniform(&mut rng, cfg.large_side);
        let cx = uniform(&mut rng, (0.0, fw));
        let cy = uniform(&mut rng, (0.0, fh));
        let w = w.min(fw);
        let h = h.min(fh);
        let id = objects.len() as u32;
        objects.push(ObjectAnnotation {
            id,
            bbox: BBox::new((cx - 0.5 * w).clamp(0.0, fw - w), (cy - 0.5 * h).clamp(0.0, fh - h), w, h),
            category: LARGE_CATEGORY,
        });
    }

    Scene::new(cfg.width, cfg.height, objects, format!("synth-{}", cfg.seed))
        .expect("synthetic scene satisfies scene invariants")
}

/// `count` scenes, the `i`th with its own derived seed and a cluster count
/// drawn uniformly from `clusters` (inclusive).
pub fn synth_suite(
    base: &SynthSceneConfig,
    count: usize,
    clusters: (usize, usize),
    root_seed: u64,
) -> Vec<Scene> {
    (0..count)
        .map(|i| {
            let mut pick = rng::stream(root_seed, "suite", i as u64);
            let mut cfg = base.clone();
            cfg.clusters = pick.random_range(clusters.0..=clusters.1.max(clusters.0));
            cfg.seed = rng::derive_seed(root_seed, "scene", i as u64);
            let mut scene = synth_scene(&cfg);
            scene.source_id = format!("scene_{i:04}");
            scene
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obj(w: f64, h: f64) -> ObjectAnnotation {
        ObjectAnnotation { id: 0, bbox: BBox::new(0.0, 0.0, w, h), category: 1 }
    }

    #[test]
    fn scale_and_weight_examples() {
        assert_eq!(object_scale(&obj(40.0, 40.0)), 40.0);
        assert_eq!(object_scale(&obj(16.0, 25.0)), 20.0);
        assert_eq!(object_scale(&obj(1.0, 1.0)), 1.0);
        assert_relative_eq!(object_weight(&obj(20.0, 20.0)), 0.05);
        assert_eq!(object_weight(&obj(1.0, 1.0)), 1.0);
        assert_relative_eq!(object_weight(&obj(100.0, 100.0)), 0.01);
    }

    #[test]
    fn visdrone_lines() {
        let text = "684,8,273,116,1,4,0,0\n0,0,10,10,1,0,0,0\n5,5,3,3,0,11,0,0\n";
        let (scene, skipped) = parse_visdrone(text, 1360, 765, "img").unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(scene.objects.len(), 1);
        assert_eq!(scene.objects[0].bbox, BBox::new(684.0, 8.0, 273.0, 116.0));
        assert_eq!(scene.objects[0].category, 4);
    }

    #[test]
    fn visdrone_bad_line_names_line() {
        let text = "684,8,273,116,1,4,0,0\n10,10,abc,5,1,4,0,0\n";
        match parse_visdrone(text, 1360, 765, "img") {
            Err(SceneError::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected annotation error, got {other:?}"),
        }
        assert!(parse_visdrone("1,2,3\n", 1360, 765, "img").is_err());
    }

    #[test]
    fn visdrone_clips_and_counts_skips() {
        let text = "1350,700,40,100,1,4,0,0,\n2000,10,5,5,1,4,0,0\n";
        let (scene, skipped) = parse_visdrone(text, 1360, 765, "img").unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(scene.objects[0].bbox, BBox::new(1350.0, 700.0, 10.0, 65.0));
    }

    #[test]
    fn scene_json_examples() {
        let s = parse_scene_json(r#"{"width":100,"height":100,"objects":[]}"#, "a").unwrap();
        assert!(s.objects.is_empty());

        let s = parse_scene_json(
            r#"{"width":100,"height":100,"objects":[{"x":0,"y":0,"w":10,"h":10,"category":1}]}"#,
            "a",
        )
        .unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].id, 0);

        let s = parse_scene_json(
            r#"{"width":100,"height":100,"objects":[
                {"x":95,"y":-5,"w":10,"h":10,"category":1},
                {"x":200,"y":0,"w":10,"h":10,"category":1}]}"#,
            "a",
        )
        .unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].bbox, BBox::new(95.0, 0.0, 5.0, 5.0));
    }

    #[test]
    fn scene_json_errors() {
        assert!(matches!(
            parse_scene_json(r#"{"width":100,"objects":[]}"#, "a"),
            Err(SceneError::Json { .. })
        ));
        assert!(matches!(
            parse_scene_json(r#"{"width":"wide","height":100,"objects":[]}"#, "a"),
            Err(SceneError::Json { .. })
        ));
        assert!(matches!(
            parse_scene_json(r#"{"width":10,"height":100,"objects":[]}"#, "a"),
            Err(SceneError::TooSmall { .. })
        ));
    }

    #[test]
    fn synth_examples() {
        let empty = SynthSceneConfig { clusters: 0, large_scatter_fraction: 0.0, ..Default::default() };
        assert!(synth_scene(&empty).is_empty());

        let cfg = SynthSceneConfig {
            clusters: 2,
            objects_per_cluster: 10,
            small_side: (8.0, 24.0),
            medium_fraction: 0.0,
            large_scatter_fraction: 0.0,
            seed: 11,
            ..Default::default()
        };
        let s = synth_scene(&cfg);
        assert_eq!(s.objects.len(), 20);
        for o in &s.objects {
            assert!((8.0..=24.0).contains(&o.bbox.w) && (8.0..=24.0).contains(&o.bbox.h));
            assert!(o.bbox.x >= 0.0 && o.bbox.right() <= 1280.0);
            assert!(o.bbox.y >= 0.0 && o.bbox.bottom() <= 960.0);
        }
        assert_eq!(synth_scene(&cfg), s);
    }

    #[test]
    fn suite_varies_clusters_deterministically() {
        let base = SynthSceneConfig::default();
        let a = synth_suite(&base, 6, (2, 4), 3);
        let b = synth_suite(&base, 6, (2, 4), 3);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    proptest! {
        #[test]
        fn weight_times_scale_is_one(w in 0.5f64..500.0, h in 0.5f64..500.0) {
            let o = obj(w, h);
            prop_assert!((o.weight() * o.scale() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn json_round_trip_is_exact(seed in any::<u64>(), clusters in 0usize..4) {
            let cfg = SynthSceneConfig { clusters, seed, ..Default::default() };
            let scene = synth_scene(&cfg);
            let back = parse_scene_json(&emit_scene_json(&scene), "x").unwrap();
            prop_assert_eq!(back, scene);
        }
    }
}
