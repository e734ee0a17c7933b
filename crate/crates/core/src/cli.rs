//! The `adazoom` command line.
//!
//! Every subcommand reads an optional JSON [`RunConfig`], applies flag
//! overrides on top, writes the effective config to `<out>/config.json` and
//! then does its work. Exit codes: 0 success, 1 usage or config error, 2
//! runtime error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::detector::{
    captured_weight, collaborative_reweight, collaborative_round, full_pipeline, greedy_regions, parse_detection_line,
    write_detections_jsonl, CtConfig, Detection, DetectorConfig,
};
use crate::env::{EnvConfig, RewardConfig};
use crate::geometry::{multi_partition, BBox, GridDims, Region, ZoomSpec, MULTI_RATIO_UP, MULTI_SCALE_UP};
use crate::metrics::{average_precision, emit_report, evaluate, load_report, EvalOptions, EvalReport, COCO_THRESHOLDS};
use crate::policy::PolicyParams;
use crate::rng::derive_seed;
use crate::scene::{emit_scene_json, load_scene_dir, synth_suite, Scene, SynthSceneConfig};
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of scene JSON files; a synthetic suite is generated when
    /// unset.
    pub scenes: Option<PathBuf>,
    pub out: PathBuf,
    /// Policy checkpoint read by `infer` and `ct`.
    pub checkpoint: Option<PathBuf>,
    /// Detector config file, e.g. one written by `ct`. Replaces `detector`.
    pub detector_path: Option<PathBuf>,
    pub grid: GridDims,
    pub zoom: ZoomSpec,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub ct: CtConfig,
    pub synth: SynthSceneConfig,
    pub scene_count: usize,
    /// Cluster count range of the synthetic suite, inclusive.
    pub clusters: (usize, usize),
    /// Regions per scene at inference.
    pub k: usize,
    /// Tile overlap in pixels for uniform-partition baselines.
    pub overlap: f64,
    /// Root seed. Training, detector and scene seeds are derived from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenes: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            detector_path: None,
            grid: GridDims::default(),
            zoom: ZoomSpec::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            ct: CtConfig::default(),
            synth: SynthSceneConfig::default(),
            scene_count: 50,
            clusters: (2, 4),
            k: 7,
            overlap: 50.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn env(&self) -> EnvConfig {
        EnvConfig { grid: self.grid, zoom: self.zoom.clone(), reward: self.reward }
    }

    /// Overwrite the derived sub-seeds from the root seed.
    pub fn derive_seeds(&mut self) {
        self.train.seed = derive_seed(self.seed, "rollout", 0);
        self.detector.seed = derive_seed(self.seed, "detector", 0);
        self.synth.seed = derive_seed(self.seed, "scene", 0);
    }

    pub fn validate(&self) -> Result<(), String> {
        self.env().validate()?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.detector.validate()?;
        self.synth.validate()?;
        if self.scene_count == 0 {
            return Err("scene_count must be at least 1".into());
        }
        if self.clusters.0 > self.clusters.1 {
            return Err(format!("cluster range {:?} is empty", self.clusters));
        }
        if !(self.overlap >= 0.0) {
            return Err(format!("overlap must be non-negative, got {}", self.overlap));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn checkpoint_err(e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "adazoom", version, about = "Adaptive focus regions for detection in large scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for scene-level parallelism (0: all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scene directory; a synthetic suite is used when absent.
    #[arg(long, value_name = "DIR")]
    scenes: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene suite to <out>/scenes.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a policy; writes checkpoint.json and train_report.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Greedy regions and detections for every scene.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        detector: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Uniform-partition baselines through the same detection pipeline. All
    /// five variants when no variant flag is given.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        detector: Option<PathBuf>,
        /// Tiling as ROWSxCOLS, repeatable.
        #[arg(long, value_name = "RxC", value_parser = parse_tiling)]
        grid: Vec<(usize, usize)>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        multi_scale: bool,
        #[arg(long)]
        multi_ratio: bool,
    },
    /// Evaluate run directories written by infer or baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR", required = true)]
        run: Vec<PathBuf>,
    },
    /// Collaborative rounds starting from a checkpoint.
    Ct {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        detector: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Re-emit reports stored by eval.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR", required = true)]
        run: Vec<PathBuf>,
    },
}

fn parse_tiling(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count in {s:?}"))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count in {s:?}"))?;
    if r == 0 || c == 0 {
        return Err(format!("tiling {s:?} has no tiles"));
    }
    Ok((r, c))
}

/// Parse `argv` (program name first) and run. Returns the exit code.
pub fn run_command(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::GenScenes { common, .. }
        | Command::Train { common, .. }
        | Command::Infer { common, .. }
        | Command::Baseline { common, .. }
        | Command::Eval { common, .. }
        | Command::Ct { common, .. }
        | Command::Report { common, .. } => common,
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let c = common(&cmd);
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = &c.scenes {
        cfg.scenes = Some(s.clone());
    }
    let jobs = c.jobs;
    match &cmd {
        Command::GenScenes { count, .. } => cfg.scene_count = count.unwrap_or(cfg.scene_count),
        Command::Train { iterations, lr, .. } => {
            cfg.train.iterations = iterations.unwrap_or(cfg.train.iterations);
            cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
        }
        Command::Infer { checkpoint, detector, k, .. } => {
            cfg.checkpoint = checkpoint.clone().or(cfg.checkpoint);
            cfg.detector_path = detector.clone().or(cfg.detector_path);
            cfg.k = k.unwrap_or(cfg.k);
        }
        Command::Baseline { detector, overlap, .. } => {
            cfg.detector_path = detector.clone().or(cfg.detector_path);
            cfg.overlap = overlap.unwrap_or(cfg.overlap);
        }
        Command::Ct { checkpoint, detector, rounds, iterations, k, .. } => {
            cfg.checkpoint = checkpoint.clone().or(cfg.checkpoint);
            cfg.detector_path = detector.clone().or(cfg.detector_path);
            cfg.ct.rounds = rounds.unwrap_or(cfg.ct.rounds);
            cfg.ct.policy_iters = iterations.unwrap_or(cfg.ct.policy_iters);
            cfg.k = k.unwrap_or(cfg.k);
        }
        Command::Eval { .. } | Command::Report { .. } => {}
    }
    cfg.derive_seeds();
    cfg.validate().map_err(CliError::Config)?;
    if let Some(p) = cfg.detector_path.clone() {
        let text = fs::read_to_string(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        let mut det: DetectorConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        det.validate().map_err(CliError::Config)?;
        det.seed = cfg.detector.seed;
        cfg.detector = det;
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(runtime)?;
    pool.install(|| {
        fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))?;
        let echo = serde_json::to_string_pretty(&cfg).expect("config serializes");
        write_file(&cfg.out.join("config.json"), &echo)?;
        match cmd {
            Command::GenScenes { .. } => gen_scenes(&cfg),
            Command::Train { .. } => train_cmd(&cfg),
            Command::Infer { .. } => infer(&cfg),
            Command::Baseline { grid, multi_scale, multi_ratio, .. } => baseline(&cfg, &grid, multi_scale, multi_ratio),
            Command::Eval { run, .. } => eval(&cfg, &run),
            Command::Ct { .. } => ct(&cfg),
            Command::Report { run, .. } => report(&cfg, &run),
        }
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn scenes(cfg: &RunConfig) -> Result<Vec<Scene>, CliError> {
    let scenes = match &cfg.scenes {
        Some(dir) => load_scene_dir(dir).map_err(runtime)?,
        None => synth_suite(&cfg.synth, cfg.scene_count, cfg.clusters, cfg.synth.seed),
    };
    if scenes.is_empty() {
        return Err(CliError::Runtime("no scenes".into()));
    }
    Ok(scenes)
}

fn gen_scenes(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.out.join("scenes");
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let scenes = synth_suite(&cfg.synth, cfg.scene_count, cfg.clusters, cfg.synth.seed);
    for s in &scenes {
        write_file(&dir.join(format!("{}.json", s.source_id)), &emit_scene_json(s))?;
    }
    log::info!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let scenes = scenes(cfg)?;
    let env = cfg.env();
    let report = train(&scenes, &env, &cfg.train).map_err(runtime)?;
    save_checkpoint(&cfg.out.join("checkpoint.json"), &Checkpoint::new(env, report.params.clone()))
        .map_err(checkpoint_err)?;
    let path = cfg.out.join("train_report.csv");
    let f = fs::File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    report.write_csv(BufWriter::new(f)).map_err(runtime)?;
    if let (Some(first), Some(last)) = (report.iterations.first(), report.iterations.last()) {
        log::info!("mean return {:.4} -> {:.4} over {} iterations", first.mean_return, last.mean_return, report.iterations.len());
    }
    Ok(())
}

fn load_policy(cfg: &RunConfig) -> Result<PolicyParams, CliError> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| CliError::Config("--checkpoint is required".into()))?;
    Ok(load_checkpoint(path, Some(&cfg.env())).map_err(checkpoint_err)?.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegionRecord {
    scene_id: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    scale_index: Option<usize>,
    ratio_index: Option<usize>,
}

/// Writes `regions.jsonl` and `detections.jsonl` for one run.
fn write_run(dir: &Path, scenes: &[Scene], regions: &[Vec<Region>], dets: &[Vec<Detection>]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut text = String::new();
    for (s, rs) in scenes.iter().zip(regions) {
        for r in rs {
            let rec = RegionRecord {
                scene_id: s.source_id.clone(),
                x: r.rect.x,
                y: r.rect.y,
                w: r.rect.w,
                h: r.rect.h,
                scale_index: r.scale_index,
                ratio_index: r.ratio_index,
            };
            text.push_str(&serde_json::to_string(&rec).expect("region serializes"));
            text.push('\n');
        }
    }
    write_file(&dir.join("regions.jsonl"), &text)?;
    let mut buf = Vec::new();
    for (s, d) in scenes.iter().zip(dets) {
        write_detections_jsonl(&mut buf, &s.source_id, d).map_err(runtime)?;
    }
    write_file(&dir.join("detections.jsonl"), &String::from_utf8(buf).expect("utf-8 output"))
}

fn infer(cfg: &RunConfig) -> Result<(), CliError> {
    let scenes = scenes(cfg)?;
    let params = load_policy(cfg)?;
    let env = cfg.env();
    let out: Vec<(Vec<Region>, Vec<Detection>)> = scenes
        .par_iter()
        .map(|s| {
            let regions = greedy_regions(&params, s, &env, cfg.k).map_err(runtime)?;
            let dets = full_pipeline(s, &regions, &env.zoom, &cfg.detector);
            Ok((regions, dets))
        })
        .collect::<Result<_, CliError>>()?;
    let (regions, dets): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    write_run(&cfg.out, &scenes, &regions, &dets)?;
    let n: usize = dets.iter().map(Vec::len).sum();
    log::info!("{} scenes, {} detections, K = {}", scenes.len(), n, cfg.k);
    Ok(())
}

fn baseline(cfg: &RunConfig, grids: &[(usize, usize)], multi_scale: bool, multi_ratio: bool) -> Result<(), CliError> {
    let mut variants: Vec<(String, Vec<(usize, usize)>)> =
        grids.iter().map(|&(r, c)| (format!("up_{r}x{c}"), vec![(r, c)])).collect();
    if multi_scale {
        variants.push(("up_multi_scale".into(), MULTI_SCALE_UP.to_vec()));
    }
    if multi_ratio {
        variants.push(("up_multi_ratio".into(), MULTI_RATIO_UP.to_vec()));
    }
    if variants.is_empty() {
        variants = [(1, 1), (2, 2), (3, 3)].iter().map(|&(r, c)| (format!("up_{r}x{c}"), vec![(r, c)])).collect();
        variants.push(("up_multi_scale".into(), MULTI_SCALE_UP.to_vec()));
        variants.push(("up_multi_ratio".into(), MULTI_RATIO_UP.to_vec()));
    }
    let scenes = scenes(cfg)?;
    for (name, layouts) in &variants {
        let out: Vec<(Vec<Region>, Vec<Detection>)> = scenes
            .par_iter()
            .map(|s| {
                let (w, h) = s.dims();
                let regions = multi_partition(w, h, layouts, cfg.overlap).map_err(|e| CliError::Config(e.to_string()))?;
                let dets = full_pipeline(s, &regions, &cfg.zoom, &cfg.detector);
                Ok((regions, dets))
            })
            .collect::<Result<_, CliError>>()?;
        let (regions, dets): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        write_run(&cfg.out.join(name), &scenes, &regions, &dets)?;
        log::info!("{name}: {} regions per scene", regions.first().map_or(0, Vec::len));
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Regions and detections of a run, aligned with `scenes`.
fn load_run(dir: &Path, scenes: &[Scene]) -> Result<(Vec<Vec<Region>>, Vec<Vec<Detection>>), CliError> {
    let index: HashMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.source_id.as_str(), i)).collect();
    let locate = |id: &str, path: &Path| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| CliError::Runtime(format!("{}: unknown scene {id:?}", path.display())))
    };
    let mut regions = vec![Vec::new(); scenes.len()];
    let path = dir.join("regions.jsonl");
    for line in read_lines(&path)? {
        let r: RegionRecord =
            serde_json::from_str(&line).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let i = locate(&r.scene_id, &path)?;
        regions[i].push(Region { rect: BBox::new(r.x, r.y, r.w, r.h), scale_index: r.scale_index, ratio_index: r.ratio_index });
    }
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); scenes.len()];
    let path = dir.join("detections.jsonl");
    for line in read_lines(&path)? {
        let d = parse_detection_line(&line).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let i = locate(&d.scene_id, &path)?;
        let id = dets[i].len();
        dets[i].push(Detection {
            id,
            bbox: BBox::new(d.x, d.y, d.w, d.h),
            confidence: d.confidence,
            category: d.category,
            matched_gt: None,
        });
    }
    Ok((regions, dets))
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
}

fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("run,ap,ap50,ap75,cost,recall_small,recall_medium,recall_large\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in reports {
        let recall = r.recall_by_k.last().copied().unwrap_or([None; 3]);
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.6},{},{},{}",
            r.name,
            100.0 * r.ap,
            100.0 * r.ap50,
            100.0 * r.ap75,
            r.cost_by_k.last().copied().unwrap_or(0.0),
            cell(recall[0]),
            cell(recall[1]),
            cell(recall[2])
        );
    }
    out
}

fn emit_all(cfg: &RunConfig, reports: &[EvalReport]) -> Result<(), CliError> {
    let mut seen = std::collections::HashSet::new();
    for r in reports {
        if !seen.insert(r.name.as_str()) {
            return Err(CliError::Config(format!("two runs are named {:?}", r.name)));
        }
    }
    for r in reports {
        emit_report(r, &cfg.out.join(&r.name)).map_err(runtime)?;
    }
    let table = comparison_csv(reports);
    write_file(&cfg.out.join("comparison.csv"), &table)?;
    log::info!("\n{table}");
    Ok(())
}

fn eval(cfg: &RunConfig, runs: &[PathBuf]) -> Result<(), CliError> {
    let scenes = scenes(cfg)?;
    let mut reports = Vec::new();
    for dir in runs {
        let (regions, dets) = load_run(dir, &scenes)?;
        let opts = EvalOptions {
            k_max: regions.iter().map(Vec::len).max().unwrap_or(0),
            enclosure: cfg.reward.enclosure,
            ..Default::default()
        };
        reports.push(evaluate(&run_name(dir), &scenes, &regions, &dets, &cfg.zoom, &opts).map_err(runtime)?);
    }
    emit_all(cfg, &reports)
}

fn report(cfg: &RunConfig, runs: &[PathBuf]) -> Result<(), CliError> {
    let reports = runs.iter().map(|d| load_report(d).map_err(runtime)).collect::<Result<Vec<_>, _>>()?;
    emit_all(cfg, &reports)
}

fn ct(cfg: &RunConfig) -> Result<(), CliError> {
    let scenes = scenes(cfg)?;
    let env = cfg.env();
    let mut params = load_policy(cfg)?;
    let mut det = cfg.detector.clone();
    let ct = CtConfig { k: cfg.k, ..cfg.ct.clone() };
    let mean_ap = |p: &PolicyParams, d: &DetectorConfig| -> Result<f64, CliError> {
        let dets = scenes
            .par_iter()
            .map(|s| Ok(full_pipeline(s, &greedy_regions(p, s, &env, ct.k).map_err(runtime)?, &env.zoom, d)))
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(average_precision(&scenes, &dets, &COCO_THRESHOLDS).map_err(runtime)?.ap)
    };
    let captured = |p: &PolicyParams, weights: &[Vec<f64>]| -> Result<f64, CliError> {
        let mut total = 0.0;
        for (s, w) in scenes.iter().zip(weights) {
            total += captured_weight(s, &greedy_regions(p, s, &env, ct.k).map_err(runtime)?, w, env.reward.enclosure);
        }
        Ok(total)
    };
    let mut csv = String::from("round,mean_confidence,captured_before,captured_after,ap_before,ap_after\n");
    for round in 0..ct.rounds {
        let ap_before = mean_ap(&params, &det)?;
        let r = collaborative_round(&params, &det, &scenes, &env, &cfg.train, &ct).map_err(runtime)?;
        let weights: Vec<Vec<f64>> = r.confidences.iter().map(|c| collaborative_reweight(c)).collect();
        let n: usize = r.confidences.iter().map(Vec::len).sum();
        let mean_c = r.confidences.iter().flatten().sum::<f64>() / n.max(1) as f64;
        let before = captured(&params, &weights)?;
        let after = captured(&r.params, &weights)?;
        params = r.params;
        det = r.detector;
        let ap_after = mean_ap(&params, &det)?;
        let _ = writeln!(csv, "{round},{mean_c:.6},{before:.6},{after:.6},{:.4},{:.4}", 100.0 * ap_before, 100.0 * ap_after);
        log::info!("round {round}: captured (1-c) {before:.3} -> {after:.3}, AP {:.2} -> {:.2}", 100.0 * ap_before, 100.0 * ap_after);
    }
    write_file(&cfg.out.join("ct_rounds.csv"), &csv)?;
    save_checkpoint(&cfg.out.join("checkpoint.json"), &Checkpoint::new(env.clone(), params)).map_err(checkpoint_err)?;
    write_file(&cfg.out.join("detector.json"), &serde_json::to_string_pretty(&det).expect("detector serializes"))
}
