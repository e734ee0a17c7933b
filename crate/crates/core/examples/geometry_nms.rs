//! Box geometry: IoU, enclosure, region realization on the policy grid,
//! uniform partitions and per-category NMS.
//!
//!     cargo run --example geometry_nms

use adazoom::geometry::{containment_fraction, encloses, multi_partition, MULTI_RATIO_UP};
use adazoom::{iou, nms, realize_region, uniform_partition, BBox, Detection, GridDims, ZoomSpec};

fn det(id: usize, x: f64, y: f64, side: f64, confidence: f64, category: u32) -> Detection {
    Detection { id, bbox: BBox::new(x, y, side, side), confidence, category, matched_gt: None }
}

fn main() {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0);
    let b = BBox::new(5.0, 5.0, 10.0, 10.0);
    println!("IoU of two offset squares: {:.4}", iou(&a, &b));
    println!("fraction of b inside a: {:.2}, enclosed at 0.25: {}", containment_fraction(&b, &a), encloses(&a, &b, 0.25));

    let zoom = ZoomSpec::default();
    let grid = GridDims::new(8, 8);
    for (cell, scale, ratio) in [((0, 0), 0, 1), ((3, 4), 1, 2), ((7, 7), 2, 0)] {
        let r = realize_region(cell, scale, ratio, grid, 1280.0, 960.0, &zoom);
        println!(
            "cell {cell:?} scale {scale} ratio {ratio}: {:.0}x{:.0} at ({:.0}, {:.0}), magnification {:.2}",
            r.rect.w,
            r.rect.h,
            r.rect.x,
            r.rect.y,
            zoom.magnification(&r.rect)
        );
    }

    for t in uniform_partition(1000.0, 800.0, 2, 2, 50.0).unwrap() {
        println!("2x2 tile {:?}", t.rect);
    }
    println!("multi-ratio partition: {} regions", multi_partition(1000.0, 800.0, &MULTI_RATIO_UP, 50.0).unwrap().len());

    let dets = vec![
        det(0, 100.0, 100.0, 20.0, 0.9, 1),
        det(1, 102.0, 101.0, 20.0, 0.8, 1),
        det(2, 102.0, 101.0, 20.0, 0.7, 2),
        det(3, 300.0, 300.0, 20.0, 0.6, 1),
    ];
    let kept: Vec<usize> = nms(&dets, 0.5).iter().map(|d| d.id).collect();
    println!("NMS keeps {kept:?} (the overlapping duplicate of another category survives)");
}
