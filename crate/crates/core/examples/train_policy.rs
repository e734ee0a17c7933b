//! Train the region policy on a synthetic suite and compare greedy returns
//! before and after.
//!
//!     cargo run --release --example train_policy -- [iterations] [scenes] [learning rate] [checkpoint.json]

use std::time::Instant;

use adazoom::training::evaluate_policy_reward;
use adazoom::{save_checkpoint, synth_suite, Checkpoint, train, EnvConfig, PolicyParams, SynthSceneConfig, TrainConfig};

fn main() {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let n_scenes = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let lr = args.next().and_then(|a| a.parse().ok()).unwrap_or(TrainConfig::default().learning_rate);

    let save = args.next();
    let scenes = synth_suite(&SynthSceneConfig::default(), n_scenes, (2, 4), 11);
    let env = EnvConfig::default();
    let cfg = TrainConfig { iterations, learning_rate: lr, seed: 1, ..TrainConfig::default() };

    let untrained = PolicyParams::init(env.policy_dims(cfg.hidden_units), cfg.seed);
    let before = evaluate_policy_reward(&untrained, &scenes, &env, cfg.horizon).unwrap();

    let t = Instant::now();
    let report = train(&scenes, &env, &cfg).unwrap();
    let elapsed = t.elapsed();
    let after = evaluate_policy_reward(&report.params, &scenes, &env, cfg.horizon).unwrap();

    for it in report.iterations.iter().step_by((iterations / 10).max(1)) {
        println!("iter {:5}  sampled return {:.4}  grad {:.3}", it.iteration, it.mean_return, it.grad_norm);
    }
    println!("greedy return before {:.4} ± {:.4}", before.mean, before.std);
    println!("greedy return after  {:.4} ± {:.4}", after.mean, after.std);
    if let Some(path) = save {
        save_checkpoint(path.as_ref(), &Checkpoint::new(env.clone(), report.params.clone())).unwrap();
        println!("checkpoint written to {path}");
    }
    println!("trained {iterations} iterations on {n_scenes} scenes in {:.1}s", elapsed.as_secs_f64());
}
