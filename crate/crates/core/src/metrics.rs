//! Lane benchmark metrics: mask-IoU F1 with `lane_width`-pixel lanes, mF1
//! over IoU thresholds, TuSimple point accuracy, and chamfer error between
//! matched 3D lanes.
//!
//! TP matching is optimal (Hungarian on `1 - IoU`), so every metric is
//! independent of prediction order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_assign, u_at_rows, MatchResult};
use crate::camera::{ImageSpec, Lane2D};
use crate::error::{Error, Result};
use crate::geometry::{DecoupledLane3D, Point3D};

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Lane width used for rasterisation, pixels.
    pub lane_width: f64,
    /// Strictly increasing IoU thresholds in `(0, 1]`.
    pub iou_thresholds: Vec<f64>,
    pub tusimple_pixel_tol: f64,
    /// Fraction of correct points for a TuSimple prediction to count as a hit.
    pub tusimple_match_fraction: f64,
    /// Row spacing of the TuSimple row anchors, pixels.
    pub tusimple_row_step: f64,
    /// Rasterisation scale applied to image, lanes and width.
    pub raster_scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lane_width: 30.0,
            iou_thresholds: default_thresholds(),
            tusimple_pixel_tol: 20.0,
            tusimple_match_fraction: 0.85,
            tusimple_row_step: 10.0,
            raster_scale: 1.0,
        }
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lane width must be at least 1 px, got {}",
                self.lane_width
            )));
        }
        if self.iou_thresholds.is_empty()
            || self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
            || self.iou_thresholds.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::InvalidParameter(
                "IoU thresholds must be strictly increasing values in (0, 1]".into(),
            ));
        }
        if !(self.raster_scale > 0.0) || !(self.tusimple_row_step > 0.0) {
            return Err(Error::InvalidParameter(
                "raster scale and TuSimple row step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Binary mask stored as sorted, unique linear pixel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneMask {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u32>,
}

impl LaneMask {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        self.pixels.binary_search(&(row * self.width + col)).is_ok()
    }
}

#[inline]
fn dist2_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    cx * cx + cy * cy
}

/// Pixels whose centre `(col + 0.5, row + 0.5)` lies within
/// `(width - 1) / 2` of the polyline, clipped to the image. A vertical lane
/// at an integer column covers exactly `width` columns.
pub fn rasterize_lane(lane: &Lane2D, image: ImageSpec, width: f64) -> LaneMask {
    let radius = (width - 1.0).max(0.0) / 2.0;
    let r2 = radius * radius;
    let (w, h) = (image.width, image.height);
    let mut pixels = Vec::new();
    for seg in lane.points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let c0 = (a.0.min(b.0) - radius - 0.5).floor().max(0.0);
        let c1 = (a.0.max(b.0) + radius - 0.5).ceil().min(w as f64 - 1.0);
        let r0 = (a.1.min(b.1) - radius - 0.5).floor().max(0.0);
        let r1 = (a.1.max(b.1) + radius - 0.5).ceil().min(h as f64 - 1.0);
        if !(c0 <= c1 && r0 <= r1) {
            continue;
        }
        for row in r0 as u32..=r1 as u32 {
            for col in c0 as u32..=c1 as u32 {
                if dist2_to_segment(col as f64 + 0.5, row as f64 + 0.5, a, b) <= r2 {
                    pixels.push(row * w + col);
                }
            }
        }
    }
    pixels.sort_unstable();
    pixels.dedup();
    LaneMask {
        width: w,
        height: h,
        pixels,
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks give 1, one empty mask gives 0.
pub fn mask_iou(a: &LaneMask, b: &LaneMask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() && b.is_empty() {
        return Ok(1.0);
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.pixels.len() && j < b.pixels.len() {
        match a.pixels[i].cmp(&b.pixels[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Counts at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl ThresholdCounts {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        Self {
            threshold,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
        }
    }
}

/// Per-threshold counts for one set of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Suite {
    pub per_threshold: Vec<ThresholdCounts>,
    pub mf1: f64,
    /// Pairwise mask IoU, predictions by ground truths.
    pub iou: Vec<Vec<f64>>,
    pub matches: MatchResult,
}

/// Mean of the per-threshold F1 values.
pub fn mean_f1(per_threshold: &[ThresholdCounts]) -> f64 {
    if per_threshold.is_empty() {
        return 0.0;
    }
    per_threshold.iter().map(|c| c.f1).sum::<f64>() / per_threshold.len() as f64
}

fn scaled_lane(lane: &Lane2D, s: f64) -> Lane2D {
    Lane2D {
        points: lane.points.iter().map(|&(u, v)| (u * s, v * s)).collect(),
    }
}

/// Mask-IoU matrix between predictions and ground truths.
pub fn iou_matrix(
    preds: &[Lane2D],
    gts: &[Lane2D],
    image: ImageSpec,
    cfg: &EvalConfig,
) -> Result<Vec<Vec<f64>>> {
    let s = cfg.raster_scale;
    let raster_image = ImageSpec::new(
        ((image.width as f64) * s).round().max(1.0) as u32,
        ((image.height as f64) * s).round().max(1.0) as u32,
    )?;
    let raster = |l: &Lane2D| {
        if s == 1.0 {
            rasterize_lane(l, raster_image, cfg.lane_width)
        } else {
            rasterize_lane(&scaled_lane(l, s), raster_image, cfg.lane_width * s)
        }
    };
    let pm: Vec<LaneMask> = preds.iter().map(raster).collect();
    let gm: Vec<LaneMask> = gts.iter().map(raster).collect();
    pm.iter()
        .map(|p| gm.iter().map(|g| mask_iou(p, g)).collect())
        .collect()
}

/// TP/FP/FN, precision, recall and F1 at every configured threshold, with
/// predictions matched to ground truths by Hungarian assignment on
/// `1 - IoU`.
pub fn f1_suite(
    preds: &[Lane2D],
    gts: &[Lane2D],
    image: ImageSpec,
    cfg: &EvalConfig,
) -> Result<F1Suite> {
    cfg.validate()?;
    let iou = iou_matrix(preds, gts, image, cfg)?;
    let costs: Vec<Vec<f64>> = iou
        .iter()
        .map(|r| r.iter().map(|v| 1.0 - v).collect())
        .collect();
    let matches = hungarian_assign(&costs, f64::INFINITY)?;
    let per_threshold: Vec<ThresholdCounts> = cfg
        .iou_thresholds
        .iter()
        .map(|&t| {
            let tp = matches
                .pairs
                .iter()
                .filter(|&&(p, g, _)| iou[p][g] >= t)
                .count();
            ThresholdCounts::from_counts(t, tp, preds.len() - tp, gts.len() - tp)
        })
        .collect();
    let mf1 = mean_f1(&per_threshold);
    Ok(F1Suite {
        per_threshold,
        mf1,
        iou,
        matches,
    })
}

/// TuSimple-style point accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TuSimpleResult {
    pub correct_points: usize,
    pub gt_points: usize,
    pub matched: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    pub accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl TuSimpleResult {
    fn finish(mut self) -> Self {
        self.accuracy = ratio(self.correct_points as f64, self.gt_points as f64);
        self.fp_rate = ratio(
            (self.predictions - self.matched) as f64,
            self.predictions as f64,
        );
        self.fn_rate = ratio(
            (self.ground_truths - self.matched) as f64,
            self.ground_truths as f64,
        );
        self
    }

    /// Sums the counts of several frames.
    pub fn aggregate(results: &[TuSimpleResult]) -> Self {
        results
            .iter()
            .fold(TuSimpleResult::default(), |acc, r| TuSimpleResult {
                correct_points: acc.correct_points + r.correct_points,
                gt_points: acc.gt_points + r.gt_points,
                matched: acc.matched + r.matched,
                predictions: acc.predictions + r.predictions,
                ground_truths: acc.ground_truths + r.ground_truths,
                ..acc
            })
            .finish()
    }
}

/// A ground-truth point at a row anchor is correct when the matched
/// prediction's `u` on that row is within `tusimple_pixel_tol`. Predictions
/// and ground truths are paired one-to-one to maximise correct points; a pair
/// counts as a hit when at least `tusimple_match_fraction` of the ground
/// truth's points are correct.
pub fn tusimple_accuracy(
    preds: &[Lane2D],
    gts: &[Lane2D],
    row_anchors: &[f64],
    cfg: &EvalConfig,
) -> Result<TuSimpleResult> {
    let pu: Vec<Vec<Option<f64>>> = preds.iter().map(|l| u_at_rows(l, row_anchors)).collect();
    let gu: Vec<Vec<Option<f64>>> = gts.iter().map(|l| u_at_rows(l, row_anchors)).collect();
    let gt_points: Vec<usize> = gu.iter().map(|g| g.iter().flatten().count()).collect();
    let correct: Vec<Vec<usize>> = pu
        .iter()
        .map(|p| {
            gu.iter()
                .map(|g| {
                    p.iter()
                        .zip(g)
                        .filter(|(a, b)| match (a, b) {
                            (Some(a), Some(b)) => (a - b).abs() <= cfg.tusimple_pixel_tol,
                            _ => false,
                        })
                        .count()
                })
                .collect()
        })
        .collect();
    let costs: Vec<Vec<f64>> = correct
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(g, &c)| (gt_points[g] - c) as f64)
                .collect()
        })
        .collect();
    let m = hungarian_assign(&costs, f64::INFINITY)?;
    let mut res = TuSimpleResult {
        gt_points: gt_points.iter().sum(),
        predictions: preds.len(),
        ground_truths: gts.len(),
        ..Default::default()
    };
    for &(p, g, _) in &m.pairs {
        res.correct_points += correct[p][g];
        if gt_points[g] > 0
            && correct[p][g] as f64 >= cfg.tusimple_match_fraction * gt_points[g] as f64
        {
            res.matched += 1;
        }
    }
    Ok(res.finish())
}

/// Row anchors `height - 1, height - 1 - step, ...` down to the top row.
pub fn row_anchors(image: ImageSpec, step: f64) -> Vec<f64> {
    let last = (image.height - 1) as f64;
    let n = (last / step).floor() as usize;
    (0..=n).map(|i| last - i as f64 * step).collect()
}

fn point_segment_distance(p: &Point3D, a: &Point3D, b: &Point3D) -> f64 {
    let d = (b.x - a.x, b.y - a.y, b.z - a.z);
    let len2 = d.0 * d.0 + d.1 * d.1 + d.2 * d.2;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * d.0 + (p.y - a.y) * d.1 + (p.z - a.z) * d.2) / len2).clamp(0.0, 1.0)
    };
    p.distance(&Point3D::new(a.x + t * d.0, a.y + t * d.1, a.z + t * d.2))
}

fn mean_distance_to_polyline(points: &[Point3D], line: &[Point3D]) -> f64 {
    let total: f64 = points
        .iter()
        .map(|p| {
            if line.len() == 1 {
                return p.distance(&line[0]);
            }
            line.windows(2)
                .map(|w| point_segment_distance(p, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

/// Symmetric chamfer distance between two 3D polylines: the average of the
/// mean point-to-polyline distance in each direction.
pub fn chamfer_distance(a: &[Point3D], b: &[Point3D]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput(
            "chamfer distance of an empty lane".into(),
        ));
    }
    Ok(0.5 * (mean_distance_to_polyline(a, b) + mean_distance_to_polyline(b, a)))
}

/// Samples per predicted lane for the chamfer error.
pub const CD_SAMPLES: usize = 72;

/// Mean chamfer distance over matched pairs, or `None` without matches.
pub fn cd_error(
    pred3d: &[DecoupledLane3D],
    gt3d: &[Vec<Point3D>],
    matches: &MatchResult,
) -> Result<Option<f64>> {
    cd_error_parts(pred3d, gt3d, matches).map(|(sum, n)| (n > 0).then(|| sum / n as f64))
}

/// Sum of per-pair chamfer distances and the pair count.
pub fn cd_error_parts(
    pred3d: &[DecoupledLane3D],
    gt3d: &[Vec<Point3D>],
    matches: &MatchResult,
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    for &(p, g, _) in &matches.pairs {
        let pred = pred3d
            .get(p)
            .ok_or_else(|| Error::InvalidParameter(format!("no prediction {p}")))?;
        let gt = gt3d
            .get(g)
            .ok_or_else(|| Error::InvalidParameter(format!("no ground truth {g}")))?;
        sum += chamfer_distance(&pred.sample(CD_SAMPLES), gt)?;
    }
    Ok((sum, matches.pairs.len()))
}

/// Dataset-level evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    /// Threshold (two decimals) to F1.
    pub f1_at: BTreeMap<String, f64>,
    pub mf1: f64,
    /// Precision and recall at the threshold closest to 0.5.
    pub precision: f64,
    pub recall: f64,
    pub tusimple_accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// Meters; absent without 3D predictions, 3D ground truth, or matches.
    pub cd_error: Option<f64>,
    pub counts: Vec<ThresholdCounts>,
}

impl EvalReport {
    /// Builds the report from summed per-threshold counts.
    pub fn from_totals(
        frames: usize,
        predictions: usize,
        ground_truths: usize,
        thresholds: &[f64],
        totals: &[(usize, usize, usize)],
        tusimple: &TuSimpleResult,
        cd_error: Option<f64>,
    ) -> Self {
        let counts: Vec<ThresholdCounts> = thresholds
            .iter()
            .zip(totals)
            .map(|(&t, &(tp, fp, fn_))| ThresholdCounts::from_counts(t, tp, fp, fn_))
            .collect();
        let f1_at = counts
            .iter()
            .map(|c| (format!("{:.2}", c.threshold), c.f1))
            .collect();
        let at_half = counts
            .iter()
            .min_by(|a, b| {
                (a.threshold - 0.5)
                    .abs()
                    .total_cmp(&(b.threshold - 0.5).abs())
            })
            .copied();
        Self {
            frames,
            predictions,
            ground_truths,
            f1_at,
            mf1: mean_f1(&counts),
            precision: at_half.map_or(0.0, |c| c.precision),
            recall: at_half.map_or(0.0, |c| c.recall),
            tusimple_accuracy: tusimple.accuracy,
            fp_rate: tusimple.fp_rate,
            fn_rate: tusimple.fn_rate,
            cd_error,
            counts,
        }
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "frames {}  predictions {}  ground truths {}\n",
            self.frames, self.predictions, self.ground_truths
        ));
        s.push_str("threshold      TP      FP      FN  precision  recall      F1\n");
        for c in &self.counts {
            s.push_str(&format!(
                "{:>9.2} {:>7} {:>7} {:>7} {:>10.4} {:>7.4} {:>7.4}\n",
                c.threshold, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
            ));
        }
        s.push_str(&format!("mF1               {:.4}\n", self.mf1));
        s.push_str(&format!(
            "TuSimple accuracy {:.4}  FP {:.4}  FN {:.4}\n",
            self.tusimple_accuracy, self.fp_rate, self.fn_rate
        ));
        match self.cd_error {
            Some(cd) => s.push_str(&format!("CD error          {cd:.6} m\n")),
            None => s.push_str("CD error          n/a\n"),
        }
        s
    }
}
