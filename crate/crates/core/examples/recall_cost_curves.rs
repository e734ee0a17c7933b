//! Recall by object size and pixel cost as the number of policy regions grows,
//! written as report files.
//!
//!     cargo run --release --example recall_cost_curves -- [out dir] [checkpoint.json]
//!
//! Without a checkpoint a policy is trained for 400 iterations first.

use adazoom::detector::greedy_regions;
use adazoom::metrics::{emit_report, evaluate, EvalOptions};
use adazoom::{full_pipeline, load_checkpoint, synth_suite, train, DetectorConfig, EnvConfig, SynthSceneConfig, TrainConfig};

fn main() {
    env_logger::init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "curves".into());
    let env = EnvConfig::default();
    let scenes = synth_suite(&SynthSceneConfig::default(), 30, (2, 4), 12);
    let params = match std::env::args().nth(2) {
        Some(path) => load_checkpoint(path.as_ref(), Some(&env)).unwrap().params,
        None => train(&scenes, &env, &TrainConfig { iterations: 400, seed: 1, ..Default::default() }).unwrap().params,
    };
    let k_max = 10;
    let regions: Vec<_> = scenes.iter().map(|s| greedy_regions(&params, s, &env, k_max).unwrap()).collect();
    let det = DetectorConfig::default();
    let dets: Vec<_> = scenes.iter().zip(&regions).map(|(s, r)| full_pipeline(s, r, &env.zoom, &det)).collect();
    let opts = EvalOptions { k_max, ..Default::default() };
    let report = evaluate("policy", &scenes, &regions, &dets, &env.zoom, &opts).unwrap();

    println!(" K   small  medium   large    cost");
    let cell = |v: Option<f64>| v.map_or("    -".to_string(), |v| format!("{v:.3}"));
    println!("{:2}  {:>6}  {:>6}  {:>6}  {:.3}", 0, "-", "-", "-", report.cost_by_k[0]);
    for (k, r) in report.recall_by_k.iter().enumerate() {
        println!("{:2}  {:>6}  {:>6}  {:>6}  {:.3}", k + 1, cell(r[0]), cell(r[1]), cell(r[2]), report.cost_by_k[k + 1]);
    }
    emit_report(&report, out.as_ref()).unwrap();
    println!("AP {:.2}; report files in {out}/", 100.0 * report.ap);
}
