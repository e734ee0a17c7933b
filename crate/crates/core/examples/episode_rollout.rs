//! Walk through one episode step by step: the region each action realizes,
//! the objects it newly encloses and the weighted recall reward.
//!
//!     cargo run --example episode_rollout -- [seed]

use adazoom::env::RolloutOptions;
use adazoom::{run_episode, synth_scene, EnvConfig, Environment, PolicyParams, SynthSceneConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let scene = synth_scene(&SynthSceneConfig { seed, ..Default::default() });
    let cfg = EnvConfig::default();
    let env = Environment::new(&scene, &cfg);
    let state = env.init_state();
    println!(
        "{} objects, total weight {:.3}, {} feature channels on a {}x{} grid",
        scene.objects.len(),
        env.remaining_weight(&state),
        state.features.channels(),
        cfg.grid.rows,
        cfg.grid.cols
    );

    // an untrained policy is uniform; with full guidance every fixation is
    // drawn from the object density instead
    let params = PolicyParams::zeros(env.policy_dims(None));
    let mut rng = adazoom::rng::stream(seed, "rollout", 0);
    let ep = run_episode(&env, &params, &RolloutOptions::sample(7, 1.0), &mut rng).unwrap();
    for (t, s) in ep.steps.iter().enumerate() {
        println!(
            "t={t} cell {:?} scale {} ratio {} -> {:.0}x{:.0} at ({:.0}, {:.0}); {} new objects, reward {:.4} of remaining {:.4}",
            s.action.cell,
            s.action.scale,
            s.action.ratio,
            s.region.rect.w,
            s.region.rect.h,
            s.region.rect.x,
            s.region.rect.y,
            s.newly_covered.len(),
            s.reward,
            s.remaining_weight
        );
    }
    println!("return {:.4} over {} steps", ep.total_return, ep.len());

    let greedy = run_episode(&env, &params, &RolloutOptions::greedy(7), &mut rng).unwrap();
    println!("greedy untrained policy: return {:.4}", greedy.total_return);
}
