//! Boxes, focus regions and the grid that the policy acts on.
//!
//! All rectangles are `(x, y, w, h)` in image pixels with the origin at the
//! top-left corner. The state grid is `rows × cols`; cell `(i, j)` is row `i`,
//! column `j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("partition needs at least one row and one column, got {rows}x{cols}")]
    EmptyPartition { rows: usize, cols: usize },
    #[error("tile {tile:.3}px is not larger than the {overlap}px overlap")]
    TileSmallerThanOverlap { tile: f64, overlap: f64 },
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn short_edge(&self) -> f64 {
        self.w.min(self.h)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Half-open containment test, `[x, x+w) × [y, y+h)`.
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    /// Intersection with `[0, width] × [0, height]`, or `None` when nothing
    /// with positive area remains.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BBox> {
        if self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height && self.w > 0.0 && self.h > 0.0 {
            // untouched, so that w and h survive without rounding
            return Some(*self);
        }
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fraction of `bx` that lies inside `region`.
pub fn containment_fraction(bx: &BBox, region: &BBox) -> f64 {
    let area = bx.area();
    if area <= 0.0 {
        return 0.0;
    }
    (bx.intersection_area(region) / area).min(1.0)
}

/// Whether `region` encloses `bx` to at least fraction `rho`. With `rho >= 1`
/// this is exact rectangle containment, free of area round-off.
pub fn encloses(region: &BBox, bx: &BBox, rho: f64) -> bool {
    if rho >= 1.0 {
        bx.x >= region.x && bx.y >= region.y && bx.right() <= region.right() && bx.bottom() <= region.bottom()
    } else {
        containment_fraction(bx, region) >= rho - 1e-12
    }
}

/// A focus region. Candidate indices are `None` for regions that did not come
/// from the policy (uniform tiles, the whole image).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub rect: BBox,
    pub scale_index: Option<usize>,
    pub ratio_index: Option<usize>,
}

impl Region {
    pub fn plain(rect: BBox) -> Self {
        Self { rect, scale_index: None, ratio_index: None }
    }

    pub fn whole_image(width: f64, height: f64) -> Self {
        Self::plain(BBox::new(0.0, 0.0, width, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Row-major flat index.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Image-space footprint of cell `(i, j)`.
    pub fn cell_rect(&self, i: usize, j: usize, width: f64, height: f64) -> BBox {
        let cw = width / self.cols as f64;
        let ch = height / self.rows as f64;
        BBox::new(j as f64 * cw, i as f64 * ch, cw, ch)
    }

    pub fn cell_center(&self, i: usize, j: usize, width: f64, height: f64) -> (f64, f64) {
        (
            (j as f64 + 0.5) * width / self.cols as f64,
            (i as f64 + 0.5) * height / self.rows as f64,
        )
    }

    /// Cell whose footprint contains the image point, clamped to the grid.
    pub fn cell_of_point(&self, px: f64, py: f64, width: f64, height: f64) -> (usize, usize) {
        let j = (px / width * self.cols as f64).floor();
        let i = (py / height * self.rows as f64).floor();
        (
            (i.max(0.0) as usize).min(self.rows - 1),
            (j.max(0.0) as usize).min(self.cols - 1),
        )
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self::new(32, 32)
    }
}

/// Inclusive cell range `i0..=i1` × `j0..=j1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridRect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl GridRect {
    pub fn full(grid: GridDims) -> Self {
        Self { i0: 0, i1: grid.rows - 1, j0: 0, j1: grid.cols - 1 }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn len(&self) -> usize {
        (self.i1 - self.i0 + 1) * (self.j1 - self.j0 + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.i0..=self.i1).flat_map(move |i| (self.j0..=self.j1).map(move |j| (i, j)))
    }
}

/// Desired object side-length range for one region scale. `max: None` means
/// unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min: f64,
    pub max: Option<f64>,
}

impl ScaleRange {
    pub const fn new(min: f64, max: Option<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.min && self.max.is_none_or(|m| s <= m)
    }
}

/// Candidate region scales (areas), aspect ratios (width / height) and the
/// object side-length range each scale is meant for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoomSpec {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub scale_ranges: Vec<ScaleRange>,
    pub target_short_edge: f64,
}

impl Default for ZoomSpec {
    fn default() -> Self {
        Self {
            scales: vec![240.0 * 240.0, 350.0 * 350.0, 420.0 * 420.0],
            ratios: vec![0.7, 1.0, 1.5],
            scale_ranges: vec![
                ScaleRange::new(0.0, Some(40.0)),
                ScaleRange::new(30.0, Some(60.0)),
                ScaleRange::new(50.0, None),
            ],
            target_short_edge: 800.0,
        }
    }
}

impl ZoomSpec {
    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn n_ratios(&self) -> usize {
        self.ratios.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scales.is_empty() || self.ratios.is_empty() {
            return Err("zoom spec needs at least one scale and one ratio".into());
        }
        if self.scales.len() != self.scale_ranges.len() {
            return Err(format!(
                "{} scales but {} scale ranges",
                self.scales.len(),
                self.scale_ranges.len()
            ));
        }
        if self.scales.iter().chain(&self.ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("scales and ratios must be positive".into());
        }
        for r in &self.scale_ranges {
            if r.min < 0.0 || r.max.is_some_and(|m| m <= r.min) {
                return Err(format!("bad scale range {r:?}"));
            }
        }
        if !(self.target_short_edge > 0.0) {
            return Err("target_short_edge must be positive".into());
        }
        Ok(())
    }

    /// Magnification applied to a region before detection; never below 1.
    pub fn magnification(&self, rect: &BBox) -> f64 {
        (self.target_short_edge / rect.short_edge()).max(1.0)
    }
}

/// Turn a fixation cell plus scale/ratio candidates into an image region.
///
/// The region is centred on the cell centre, then translated to lie inside the
/// image. A side longer than the image is clipped to the image.
pub fn realize_region(
    cell: (usize, usize),
    scale_index: usize,
    ratio_index: usize,
    grid: GridDims,
    width: f64,
    height: f64,
    zoom: &ZoomSpec,
) -> Region {
    let (cx, cy) = grid.cell_center(cell.0, cell.1, width, height);
    let area = zoom.scales[scale_index];
    let ratio = zoom.ratios[ratio_index];
    let w = (area * ratio).sqrt().min(width);
    let h = (area / ratio).sqrt().min(height);
    let x = (cx - 0.5 * w).clamp(0.0, width - w);
    let y = (cy - 0.5 * h).clamp(0.0, height - h);
    Region {
        rect: BBox::new(x, y, w, h),
        scale_index: Some(scale_index),
        ratio_index: Some(ratio_index),
    }
}

/// `rows × cols` tiles with a fixed pixel overlap between neighbours.
///
/// Tile size solves `n·tile − (n−1)·overlap = extent`, so the last tile ends
/// flush with the image edge.
pub fn uniform_partition(
    width: f64,
    height: f64,
    rows: usize,
    cols: usize,
    overlap: f64,
) -> Result<Vec<Region>, GeometryError> {
    if rows == 0 || cols == 0 {
        return Err(GeometryError::EmptyPartition { rows, cols });
    }
    let tile = |extent: f64, n: usize| -> Result<f64, GeometryError> {
        let t = (extent + (n as f64 - 1.0) * overlap) / n as f64;
        if n > 1 && t <= overlap {
            return Err(GeometryError::TileSmallerThanOverlap { tile: t, overlap });
        }
        Ok(if n == 1 { extent } else { t })
    };
    let tw = tile(width, cols)?;
    let th = tile(height, rows)?;
    let origin = |k: usize, n: usize, t: f64, extent: f64| {
        if k + 1 == n {
            extent - t
        } else {
            k as f64 * (t - overlap)
        }
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Region::plain(BBox::new(
                origin(c, cols, tw, width),
                origin(r, rows, th, height),
                tw,
                th,
            )));
        }
    }
    Ok(out)
}

/// Multi-scale uniform partition: `1×1`, `2×2` and `3×3` tilings, as
/// `(rows, cols)`.
pub const MULTI_SCALE_UP: [(usize, usize); 3] = [(1, 1), (2, 2), (3, 3)];
/// Multi-ratio uniform partition: `2×3`, `2×2` and `3×2` tilings, as
/// `(rows, cols)`.
pub const MULTI_RATIO_UP: [(usize, usize); 3] = [(2, 3), (2, 2), (3, 2)];

/// Union of several tilings, in the order given.
pub fn multi_partition(
    width: f64,
    height: f64,
    layouts: &[(usize, usize)],
    overlap: f64,
) -> Result<Vec<Region>, GeometryError> {
    let mut out = Vec::new();
    for &(rows, cols) in layouts {
        out.extend(uniform_partition(width, height, rows, cols, overlap)?);
    }
    Ok(out)
}

/// Cells whose centres fall inside the region (half-open). The cell holding
/// the region centre is always included so the result is never empty.
pub fn map_region_to_grid(region: &BBox, grid: GridDims, width: f64, height: f64) -> GridRect {
    let cw = width / grid.cols as f64;
    let ch = height / grid.rows as f64;
    // centre of cell k is (k + 0.5)·c; first k with centre >= lo, last with centre < hi
    let span = |lo: f64, hi: f64, c: f64, n: usize| -> Option<(usize, usize)> {
        let first = (lo / c - 0.5).ceil().max(0.0);
        let end = (hi / c - 0.5).ceil().min(n as f64);
        (end > first).then(|| (first as usize, end as usize - 1))
    };
    let (ci, cj) = {
        let (cx, cy) = region.center();
        grid.cell_of_point(cx, cy, width, height)
    };
    let (i0, i1) = match span(region.y, region.bottom(), ch, grid.rows) {
        Some((a, b)) => (a.min(ci), b.max(ci)),
        None => (ci, ci),
    };
    let (j0, j1) = match span(region.x, region.right(), cw, grid.cols) {
        Some((a, b)) => (a.min(cj), b.max(cj)),
        None => (cj, cj),
    };
    GridRect { i0, i1, j0, j1 }
}

fn by_confidence(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.id.cmp(&b.id))
}

/// Greedy per-category non-maximum suppression. A detection is dropped when a
/// kept detection of the same category overlaps it with IoU above
/// `iou_threshold`. Output is sorted by confidence, ties by lower id.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| by_confidence(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.category == d.category && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}
