//! Adaptive focus regions for small-object detection on large images.
//!
//! A policy over a coarse grid picks zoom regions (centre cell, area, aspect
//! ratio) one at a time. It is trained with REINFORCE against a scale-aware
//! weighted recall of the objects each region encloses, then evaluated by
//! running a simulated detector on the whole image plus every zoomed region.
//!
//! ```
//! use adazoom::{EnvConfig, Environment, PolicyParams, RolloutOptions, SynthSceneConfig};
//!
//! let scene = adazoom::synth_scene(&SynthSceneConfig { seed: 3, ..Default::default() });
//! let cfg = EnvConfig::default();
//! let env = Environment::new(&scene, &cfg);
//! let params = PolicyParams::zeros(env.policy_dims(None));
//! let mut rng = adazoom::rng::stream(0, "doc", 0);
//! let ep = adazoom::run_episode(&env, &params, &RolloutOptions::greedy(7), &mut rng).unwrap();
//! assert!(ep.len() <= 7);
//! ```

pub mod checkpoint;
pub mod cli;
pub mod detector;
pub mod env;
pub mod geometry;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scene;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use detector::{
    collaborative_round, collaborative_reweight, full_pipeline, match_detections, CtConfig, Detection,
    DetectorConfig,
};
pub use env::{run_episode, EnvConfig, Environment, Episode, RewardConfig, RolloutOptions, State};
pub use geometry::{iou, nms, realize_region, uniform_partition, BBox, GridDims, Region, ZoomSpec};
pub use metrics::{average_precision, cost_proxy, recall_at_k, EvalReport, SizeBuckets};
pub use policy::{action_distribution, Action, PolicyDims, PolicyParams};
pub use scene::{synth_scene, synth_suite, ObjectAnnotation, Scene, SynthSceneConfig};
pub use training::{train, train_from, TrainConfig, TrainReport};
