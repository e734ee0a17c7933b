//! Whole-image detection against zoomed inference with policy regions and
//! with uniform partitions, scored by AP and pixel cost.
//!
//!     cargo run --release --example zoom_pipeline -- [checkpoint.json]
//!
//! Without a checkpoint a policy is trained for 600 iterations first.

use adazoom::detector::greedy_regions;
use adazoom::geometry::{multi_partition, MULTI_RATIO_UP, MULTI_SCALE_UP};
use adazoom::metrics::{evaluate, EvalOptions};
use adazoom::{full_pipeline, load_checkpoint, synth_suite, train, DetectorConfig, EnvConfig, Region, Scene};
use adazoom::{SynthSceneConfig, TrainConfig};

fn main() {
    env_logger::init();
    let scenes = synth_suite(&SynthSceneConfig::default(), 50, (2, 4), 11);
    let env = EnvConfig::default();
    let params = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path.as_ref(), Some(&env)).unwrap().params,
        None => train(&scenes, &env, &TrainConfig { iterations: 600, seed: 1, ..Default::default() }).unwrap().params,
    };
    let det = DetectorConfig { seed: 5, ..Default::default() };
    let fixed = |layouts: &[(usize, usize)]| -> Box<dyn Fn(&Scene) -> Vec<Region>> {
        let layouts = layouts.to_vec();
        Box::new(move |s: &Scene| {
            let (w, h) = s.dims();
            multi_partition(w, h, &layouts, 50.0).unwrap()
        })
    };
    let runs: Vec<(&str, Box<dyn Fn(&Scene) -> Vec<Region>>)> = vec![
        ("whole image", Box::new(|_: &Scene| Vec::new())),
        ("policy K=7", Box::new(|s: &Scene| greedy_regions(&params, s, &env, 7).unwrap())),
        ("UP 2x2", fixed(&[(2, 2)])),
        ("UP 3x3", fixed(&[(3, 3)])),
        ("multi-scale UP", fixed(&MULTI_SCALE_UP)),
        ("multi-ratio UP", fixed(&MULTI_RATIO_UP)),
    ];

    println!("{:<16} {:>7} {:>7} {:>7} {:>7}   recall s/m/l at K=3", "run", "AP", "AP50", "AP75", "cost");
    for (name, regions_for) in runs {
        let regions: Vec<Vec<Region>> = scenes.iter().map(|s| regions_for(s)).collect();
        let dets: Vec<_> = scenes.iter().zip(&regions).map(|(s, r)| full_pipeline(s, r, &env.zoom, &det)).collect();
        let k_max = regions.iter().map(Vec::len).max().unwrap_or(0).max(3);
        let rep = evaluate(name, &scenes, &regions, &dets, &env.zoom, &EvalOptions { k_max, ..Default::default() }).unwrap();
        let r3 = rep.recall_by_k[2].map(|v| v.map_or("-".to_string(), |x| format!("{:.3}", x)));
        println!(
            "{:<16} {:>7.2} {:>7.2} {:>7.2} {:>7.3}   {}",
            name,
            rep.ap * 100.0,
            rep.ap50 * 100.0,
            rep.ap75 * 100.0,
            rep.cost_by_k[k_max.min(rep.cost_by_k.len() - 1)],
            r3.join(" / ")
        );
    }
}
