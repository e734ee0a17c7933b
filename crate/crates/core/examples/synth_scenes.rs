//! Generate a synthetic scene, summarize its objects by size bucket, write
//! it as JSON and parse a VisDrone-style annotation for comparison.
//!
//!     cargo run --example synth_scenes -- [seed] [out.json]

use adazoom::metrics::Bucket;
use adazoom::scene::{emit_scene_json, parse_scene_json, parse_visdrone};
use adazoom::{synth_scene, synth_suite, Scene, SizeBuckets, SynthSceneConfig};

fn summarize(label: &str, scene: &Scene) {
    let buckets = SizeBuckets::default();
    let mut counts = [0usize; 3];
    for o in &scene.objects {
        let b = buckets.classify(o.bbox.area());
        counts[Bucket::ALL.iter().position(|x| *x == b).unwrap()] += 1;
    }
    println!(
        "{label}: {}x{}, {} objects (small {}, medium {}, large {})",
        scene.width,
        scene.height,
        scene.objects.len(),
        counts[0],
        counts[1],
        counts[2]
    );
}

fn main() {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(7);
    let scene = synth_scene(&SynthSceneConfig { seed, hard_clusters: 1, ..Default::default() });
    summarize(&scene.source_id, &scene);

    let json = emit_scene_json(&scene);
    let back = parse_scene_json(&json, "copy").unwrap();
    assert_eq!(back, scene);
    if let Some(path) = std::env::args().nth(2) {
        std::fs::write(&path, &json).unwrap();
        println!("wrote {path}");
    }

    // sizes of every object in a small suite
    let suite = synth_suite(&SynthSceneConfig::default(), 10, (2, 4), seed);
    let mut sides: Vec<f64> = suite.iter().flat_map(|s| s.objects.iter().map(|o| o.scale())).collect();
    sides.sort_by(f64::total_cmp);
    let q = |p: f64| sides[((sides.len() - 1) as f64 * p) as usize];
    println!("suite of {}: object side quartiles {:.1} / {:.1} / {:.1}", suite.len(), q(0.25), q(0.5), q(0.75));

    // category 0 (ignored region) is dropped, the last box is clipped to the image
    let annotation = "684,8,273,116,0,0,0,0\n406,119,265,70,1,4,0,0\n200,300,12,18,1,1,0,1\n1900,1000,40,40,1,2,0,0\n";
    let (vd, dropped) = parse_visdrone(annotation, 1920, 1020, "visdrone-like").unwrap();
    summarize("visdrone-like", &vd);
    println!("dropped after clipping: {dropped}, last box {:?}", vd.objects.last().unwrap().bbox);
}
