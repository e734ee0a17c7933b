use proptest::prelude::*;

use adazoom::detector::{collaborative_reweight, match_detections, MERGE_IOU};
use adazoom::geometry::multi_partition;
use adazoom::{full_pipeline, iou, nms, synth_scene, BBox, Detection, DetectorConfig, Region, SynthSceneConfig, ZoomSpec};

fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0.0..300.0f64, 0.0..300.0f64, 4.0..80.0f64, 4.0..80.0f64, 0.0..1.0f64, 0..3u32), 0..40).prop_map(
        |v| {
            v.into_iter()
                .enumerate()
                .map(|(id, (x, y, w, h, c, cat))| Detection { id, bbox: BBox::new(x, y, w, h), confidence: c, category: cat, matched_gt: None })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn nms_keeps_a_separated_subset(dets in arb_dets(), thr in 0.1..0.9f64) {
        let kept = nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(a.category != b.category || iou(&a.bbox, &b.bbox) <= thr);
            }
        }
        // every dropped box is covered by a kept one of its category that ranks higher
        for d in dets.iter().filter(|d| !kept.iter().any(|k| k.id == d.id)) {
            prop_assert!(kept.iter().any(|k| k.category == d.category && iou(&k.bbox, &d.bbox) > thr && k.confidence >= d.confidence));
        }
    }

    #[test]
    fn region_order_does_not_change_detections(seed in 0u64..200, rot in 0usize..9) {
        let scene = synth_scene(&SynthSceneConfig { seed, clusters: 2, ..Default::default() });
        let (w, h) = scene.dims();
        let mut regions: Vec<Region> = multi_partition(w, h, &[(3, 3)], 40.0).unwrap();
        let zoom = ZoomSpec::default();
        let det = DetectorConfig { seed, ..Default::default() };
        let a = full_pipeline(&scene, &regions, &zoom, &det);
        regions.rotate_left(rot);
        regions.swap(0, 8 - rot.min(8));
        prop_assert_eq!(a, full_pipeline(&scene, &regions, &zoom, &det));
    }

    #[test]
    fn matching_and_reweighting_stay_in_range(seed in 0u64..200) {
        let scene = synth_scene(&SynthSceneConfig { seed, ..Default::default() });
        let det = DetectorConfig { seed, ..Default::default() };
        let dets = full_pipeline(&scene, &[], &ZoomSpec::default(), &det);
        let m = match_detections(&scene, &dets, MERGE_IOU);
        let matched = m.matched.iter().filter(|x| x.is_some()).count();
        prop_assert!(matched <= scene.objects.len().min(dets.len()));
        for w in collaborative_reweight(&m.best_confidence) {
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }
}
