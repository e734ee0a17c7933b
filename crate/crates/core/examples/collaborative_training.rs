//! One collaborative round on scenes that contain a cluster of hard, tiny
//! objects: reweight objects by how poorly the current pair detects them,
//! finetune the policy on that, then finetune the detector on where the new
//! policy zooms.
//!
//!     cargo run --release --example collaborative_training -- [policy iterations] [k]

use adazoom::detector::{captured_weight, greedy_regions, CtRound};
use adazoom::metrics::COCO_THRESHOLDS;
use adazoom::{average_precision, collaborative_reweight, collaborative_round, full_pipeline, synth_suite, train};
use adazoom::{CtConfig, DetectorConfig, EnvConfig, PolicyParams, Scene, SynthSceneConfig, TrainConfig};

fn captured(params: &PolicyParams, scenes: &[Scene], weights: &[Vec<f64>], env: &EnvConfig, k: usize) -> f64 {
    scenes
        .iter()
        .zip(weights)
        .map(|(s, w)| captured_weight(s, &greedy_regions(params, s, env, k).unwrap(), w, env.reward.enclosure))
        .sum()
}

fn mean_ap(params: &PolicyParams, det: &DetectorConfig, scenes: &[Scene], env: &EnvConfig, k: usize) -> f64 {
    let dets: Vec<_> = scenes
        .iter()
        .map(|s| full_pipeline(s, &greedy_regions(params, s, env, k).unwrap(), &env.zoom, det))
        .collect();
    100.0 * average_precision(scenes, &dets, &COCO_THRESHOLDS).unwrap().ap
}

fn main() {
    env_logger::init();
    let arg = |i: usize, d: usize| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(d);
    let base = SynthSceneConfig { hard_clusters: 1, ..Default::default() };
    let scenes = synth_suite(&base, 50, (2, 4), 23);
    let env = EnvConfig::default();
    let train_cfg = TrainConfig { iterations: 2000, seed: 2, ..Default::default() };
    let det = DetectorConfig { seed: 9, ..Default::default() };
    let ct = CtConfig { policy_iters: arg(1, 300), k: arg(2, 7), ..Default::default() };

    println!("training the scale-reward policy...");
    let sr = train(&scenes, &env, &train_cfg).unwrap().params;
    let CtRound { params, detector, confidences, exposure, .. } =
        collaborative_round(&sr, &det, &scenes, &env, &train_cfg, &ct).unwrap();

    let weights: Vec<Vec<f64>> = confidences.iter().map(|c| collaborative_reweight(c)).collect();
    let total: f64 = weights.iter().flatten().sum();
    let before = captured(&sr, &scenes, &weights, &env, ct.k);
    let after = captured(&params, &scenes, &weights, &env, ct.k);
    println!("(1-c) mass in top-{} regions: {before:.2} -> {after:.2} of {total:.2} ({:+.1}%)", ct.k, 100.0 * (after / before - 1.0));
    println!("AP without CT {:.2}, with CT {:.2}", mean_ap(&sr, &det, &scenes, &env, ct.k), mean_ap(&params, &detector, &scenes, &env, ct.k));
    println!("exposure per scale bin {exposure:.1?}");
    println!("detector offsets after finetuning {:.2?}", detector.skill_offsets);
}
