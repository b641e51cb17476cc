//! Training losses for decoupled lanes, each returning its value together
//! with the analytic gradient with respect to the lane parameters
//! `(a, b, c, d, heights.., z_min, z_max, score)`.
//!
//! Non-smooth points (`|.|` at zero, `min`/`max` ties) use a zero
//! subgradient.

use serde::{Deserialize, Serialize};

use crate::assignment::{
    first_crossings, hungarian_assign, matching_cost, resample_on_grid, MatchResult,
    ResampledLane2D, RowGrid,
};
use crate::camera::{project_lane, CameraIntrinsics, ImageSpec, Lane2D};
use crate::error::{Error, Result};
use crate::geometry::{
    interpolate_heights, sample_depth, sample_fraction, DecoupledLane3D, Point3D,
};

/// Score clamp used by the classification loss.
pub const SCORE_EPS: f64 = 1e-7;

/// Lane IoU radius and sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUConfig {
    /// Half-width of a lane: meters in BEV, pixels in the image.
    pub e: f64,
    pub sample_count: usize,
}

impl IoUConfig {
    pub fn new(e: f64, sample_count: usize) -> Result<Self> {
        if !(e > 0.0 && e.is_finite()) || sample_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "IoU config needs e > 0 and sample_count >= 2 (got {e}, {sample_count})"
            )));
        }
        Ok(Self { e, sample_count })
    }

    pub const fn bev_default() -> Self {
        Self {
            e: 0.5,
            sample_count: 72,
        }
    }

    pub const fn perspective_default() -> Self {
        Self {
            e: 15.0,
            sample_count: 72,
        }
    }
}

/// Weights of the 3D and 2D loss groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and non-negative (got {alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Gradient with respect to one lane's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGradient {
    /// `d/d(a, b, c, d)`.
    pub curve: [f64; 4],
    pub heights: Vec<f64>,
    pub z_min: f64,
    pub z_max: f64,
    pub score: f64,
}

impl LaneGradient {
    pub fn zeros(keypoints: usize) -> Self {
        Self {
            curve: [0.0; 4],
            heights: vec![0.0; keypoints],
            z_min: 0.0,
            z_max: 0.0,
            score: 0.0,
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &LaneGradient, s: f64) {
        for (a, b) in self.curve.iter_mut().zip(&other.curve) {
            *a += s * b;
        }
        for (a, b) in self.heights.iter_mut().zip(&other.heights) {
            *a += s * b;
        }
        self.z_min += s * other.z_min;
        self.z_max += s * other.z_max;
        self.score += s * other.score;
    }

    /// Same layout as [`DecoupledLane3D::to_params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.heights.len() + 7);
        v.extend_from_slice(&self.curve);
        v.extend_from_slice(&self.heights);
        v.extend_from_slice(&[self.z_min, self.z_max, self.score]);
        v
    }
}

/// Per-sample Lane IoU and its derivative with respect to the predicted
/// position.
#[inline]
fn sample_iou(xp: f64, xg: f64, e: f64) -> (f64, f64) {
    let s = (xp - xg).abs();
    let iou = (2.0 * e - s) / (2.0 * e + s);
    let ds = -4.0 * e / ((2.0 * e + s) * (2.0 * e + s));
    let sign = if xp > xg {
        1.0
    } else if xp < xg {
        -1.0
    } else {
        0.0
    };
    (iou, ds * sign)
}

/// Mean Lane IoU of two equally sampled lanes with radius `e`. Lies in
/// `(-1, 1]`; negative once the lanes are more than `2e` apart.
pub fn lane_iou(xs_pred: &[f64], xs_gt: &[f64], e: f64) -> Result<f64> {
    if xs_pred.len() != xs_gt.len() {
        return Err(Error::LengthMismatch {
            left: xs_pred.len(),
            right: xs_gt.len(),
        });
    }
    if xs_pred.is_empty() {
        return Err(Error::DegenerateInput(
            "lane IoU of empty sample lists".into(),
        ));
    }
    let sum: f64 = xs_pred
        .iter()
        .zip(xs_gt)
        .map(|(&p, &g)| sample_iou(p, g, e).0)
        .sum();
    Ok(sum / xs_pred.len() as f64)
}

/// Lane IoU loss in the bird's-eye view: `1 - IoU` between the predicted
/// curve evaluated at `zs` and the ground-truth lateral positions `gt_xs`.
/// Returns the loss and its gradient in `(a, b, c, d)`.
pub fn bev_iou_loss(
    pred: &DecoupledLane3D,
    zs: &[f64],
    gt_xs: &[f64],
    cfg: &IoUConfig,
) -> Result<(f64, [f64; 4])> {
    if zs.len() != gt_xs.len() {
        return Err(Error::LengthMismatch {
            left: zs.len(),
            right: gt_xs.len(),
        });
    }
    if zs.is_empty() {
        return Err(Error::DegenerateInput("empty BEV sample grid".into()));
    }
    let n = zs.len() as f64;
    let mut iou = 0.0;
    let mut grad = [0.0; 4];
    for (&z, &xg) in zs.iter().zip(gt_xs) {
        let (i, di) = sample_iou(pred.curve.eval(z), xg, cfg.e);
        iou += i;
        let g = -di / n;
        grad[0] += g * z * z * z;
        grad[1] += g * z * z;
        grad[2] += g * z;
        grad[3] += g;
    }
    Ok((1.0 - iou / n, grad))
}

/// Mean absolute height error over keypoints, with its gradient.
pub fn height_loss(pred: &[f64], gt_heights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt_heights.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt_heights.len(),
        });
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(gt_heights)
        .map(|(&p, &g)| {
            sum += (p - g).abs();
            sign(p - g) / n
        })
        .collect();
    Ok((sum / n, grad))
}

/// `|dz_min| + |dz_max|` with gradient in `(z_min, z_max)`.
pub fn endpoint_z_loss(pred: (f64, f64), gt: (f64, f64)) -> (f64, [f64; 2]) {
    let (d0, d1) = (pred.0 - gt.0, pred.1 - gt.1);
    (d0.abs() + d1.abs(), [sign(d0), sign(d1)])
}

/// Population standard deviation of the heights and its gradient.
pub fn height_variance_reg(heights: &[f64]) -> (f64, Vec<f64>) {
    let n = heights.len() as f64;
    let mean = heights.iter().sum::<f64>() / n;
    let var = heights.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return (0.0, vec![0.0; heights.len()]);
    }
    let grad = heights.iter().map(|h| (h - mean) / (n * sigma)).collect();
    (sigma, grad)
}

/// Mean binary cross-entropy of `scores` (clamped to `[eps, 1 - eps]`)
/// against 0/1 `labels`, with its gradient per score.
pub fn classification_loss(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = scores.len() as f64;
    let mut sum = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let clamped = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
            // the clamp is flat outside its range
            let inside = s > SCORE_EPS && s < 1.0 - SCORE_EPS;
            let (l, g) = if y {
                (-clamped.ln(), -1.0 / clamped)
            } else {
                (-(1.0 - clamped).ln(), 1.0 / (1.0 - clamped))
            };
            sum += l;
            if inside {
                g / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected samples of a lane with the partial derivatives needed to chain
/// image-space adjoints back to lane parameters.
struct ProjectedSamples {
    uv: Vec<(f64, f64)>,
    z: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    fraction: Vec<f64>,
    bracket: Vec<(usize, f64)>,
}

impl ProjectedSamples {
    fn new(lane: &DecoupledLane3D, k: &CameraIntrinsics, count: usize) -> Result<Self> {
        let mut s = Self {
            uv: Vec::with_capacity(count),
            z: Vec::with_capacity(count),
            x: Vec::with_capacity(count),
            y: Vec::with_capacity(count),
            fraction: Vec::with_capacity(count),
            bracket: Vec::with_capacity(count),
        };
        for i in 0..count {
            let f = sample_fraction(i, count);
            let z = sample_depth(lane.profile.z_min, lane.profile.z_max, i, count);
            if !(z > 0.0) {
                return Err(Error::Domain(format!(
                    "sample at z = {z} is behind the camera"
                )));
            }
            let x = lane.curve.eval(z);
            let (lo, t) = lane.profile.bracket(f);
            let h = &lane.profile.heights;
            let y = if t == 0.0 {
                h[lo]
            } else {
                h[lo] + t * (h[lo + 1] - h[lo])
            };
            s.uv.push((k.fx * x / z + k.ox, k.fy * y / z + k.oy));
            s.z.push(z);
            s.x.push(x);
            s.y.push(y);
            s.fraction.push(f);
            s.bracket.push((lo, t));
        }
        Ok(s)
    }

    /// Chains per-sample adjoints `dL/du_i`, `dL/dv_i` into a lane gradient.
    fn chain(
        &self,
        lane: &DecoupledLane3D,
        k: &CameraIntrinsics,
        adj_u: &[f64],
        adj_v: &[f64],
    ) -> LaneGradient {
        let mut g = LaneGradient::zeros(lane.profile.heights.len());
        for i in 0..self.z.len() {
            let (au, av) = (adj_u[i], adj_v[i]);
            if au == 0.0 && av == 0.0 {
                continue;
            }
            let (z, x, y) = (self.z[i], self.x[i], self.y[i]);
            let gx = au * k.fx / z;
            g.curve[0] += gx * z * z * z;
            g.curve[1] += gx * z * z;
            g.curve[2] += gx * z;
            g.curve[3] += gx;
            let gz = au * k.fx * (lane.curve.slope(z) * z - x) / (z * z) - av * k.fy * y / (z * z);
            let f = self.fraction[i];
            g.z_min += gz * (1.0 - f);
            g.z_max += gz * f;
            let gy = av * k.fy / z;
            let (lo, t) = self.bracket[i];
            g.heights[lo] += gy * (1.0 - t);
            if t != 0.0 {
                g.heights[lo + 1] += gy * t;
            }
        }
        g
    }
}

/// Perspective-view losses of one prediction against one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveLoss {
    /// `1 - IoU` over shared rows; `f64::INFINITY` when nothing overlaps.
    pub l_per: f64,
    /// `|dv_start| + |dv_end|`.
    pub l_v: f64,
    /// Number of rows shared by the projection and the ground truth.
    pub overlap_rows: usize,
    pub grad_per: LaneGradient,
    pub grad_v: LaneGradient,
}

impl PerspectiveLoss {
    pub fn overlaps(&self) -> bool {
        self.overlap_rows > 0
    }
}

/// Lane IoU over image rows shared by the projected prediction and the
/// ground truth, plus the start/end row loss. The gradient is chained
/// through the pinhole projection into every lane parameter except the
/// score.
pub fn perspective_losses(
    pred: &DecoupledLane3D,
    k: &CameraIntrinsics,
    gt: &ResampledLane2D,
    cfg: &IoUConfig,
) -> Result<PerspectiveLoss> {
    let samples = ProjectedSamples::new(pred, k, cfg.sample_count)?;
    let grid = gt.grid;
    let crossings = first_crossings(&samples.uv, &grid);
    let count = samples.uv.len();
    let mut adj_u = vec![0.0; count];
    let mut adj_v = vec![0.0; count];

    let mut rows = Vec::new();
    for (j, c) in crossings.iter().enumerate() {
        if let (Some(c), Some(ug)) = (c, gt.u[j]) {
            rows.push((j, *c, ug));
        }
    }
    let n = rows.len();
    let n_keys = pred.profile.heights.len();
    if n == 0 {
        return Ok(PerspectiveLoss {
            l_per: f64::INFINITY,
            l_v: f64::INFINITY,
            overlap_rows: 0,
            grad_per: LaneGradient::zeros(n_keys),
            grad_v: LaneGradient::zeros(n_keys),
        });
    }

    let mut iou_sum = 0.0;
    for &(j, c, ug) in &rows {
        let (a, b) = (samples.uv[c.segment], samples.uv[c.segment + 1]);
        let up = a.0 + c.t * (b.0 - a.0);
        let (iou, d_iou) = sample_iou(up, ug, cfg.e);
        iou_sum += iou;
        let g = -d_iou / n as f64;
        if g == 0.0 {
            continue;
        }
        adj_u[c.segment] += g * (1.0 - c.t);
        adj_u[c.segment + 1] += g * c.t;
        let dv = b.1 - a.1;
        if dv != 0.0 {
            let du = b.0 - a.0;
            debug_assert!(
                (grid.row(j) - (a.1 + c.t * dv)).abs() < 1e-6 * grid.row(j).abs().max(1.0)
            );
            adj_v[c.segment] += g * du * (c.t - 1.0) / dv;
            adj_v[c.segment + 1] += g * du * (-c.t) / dv;
        }
    }
    let l_per = 1.0 - iou_sum / n as f64;
    let grad_per = samples.chain(pred, k, &adj_u, &adj_v);

    // endpoint rows
    let (mut i_hi, mut i_lo) = (0usize, 0usize);
    for (i, &(_, v)) in samples.uv.iter().enumerate() {
        if v > samples.uv[i_hi].1 {
            i_hi = i;
        }
        if v < samples.uv[i_lo].1 {
            i_lo = i;
        }
    }
    let (v_hi, v_lo) = (samples.uv[i_hi].1, samples.uv[i_lo].1);
    let v_start = grid.clamp(v_hi);
    let v_end = grid.clamp(v_lo);
    let mut adj_v = vec![0.0; count];
    let ds = v_start - gt.v_start;
    let de = v_end - gt.v_end;
    if v_hi > 0.0 && v_hi < grid.last_row() {
        adj_v[i_hi] += sign(ds);
    }
    if v_lo > 0.0 && v_lo < grid.last_row() {
        adj_v[i_lo] += sign(de);
    }
    let grad_v = samples.chain(pred, k, &vec![0.0; count], &adj_v);

    Ok(PerspectiveLoss {
        l_per,
        l_v: ds.abs() + de.abs(),
        overlap_rows: n,
        grad_per,
        grad_v,
    })
}

/// Ground-truth 3D supervision for one lane, prepared for a given keypoint
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct Gt3dTarget {
    /// BEV grid: the ground-truth sample depths.
    pub zs: Vec<f64>,
    pub xs: Vec<f64>,
    pub heights: Vec<f64>,
    pub z_min: f64,
    pub z_max: f64,
}

impl Gt3dTarget {
    /// From a polyline ordered by increasing `z`.
    pub fn from_points(points: &[Point3D], keypoints: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateInput(format!(
                "3D ground truth needs at least 2 points, got {}",
                points.len()
            )));
        }
        let z_min = points[0].z;
        let z_max = points[points.len() - 1].z;
        let heights = interpolate_heights(points, keypoints, z_min, z_max)?;
        Ok(Self {
            zs: points.iter().map(|p| p.z).collect(),
            xs: points.iter().map(|p| p.x).collect(),
            heights,
            z_min,
            z_max,
        })
    }
}

/// Supervision for one matched prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTarget {
    pub gt2d: ResampledLane2D,
    pub gt3d: Option<Gt3dTarget>,
}

/// Unweighted loss terms of one prediction against one target, each with its
/// gradient. Terms that do not apply (3D terms without 3D labels, the
/// regulariser with them) are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerms {
    pub l_bev: f64,
    pub l_h: f64,
    pub l_z: f64,
    pub l_per: f64,
    pub l_v: f64,
    pub l_reg: f64,
    pub overlap_rows: usize,
    pub grad_bev: LaneGradient,
    pub grad_h: LaneGradient,
    pub grad_z: LaneGradient,
    pub grad_per: LaneGradient,
    pub grad_v: LaneGradient,
    pub grad_reg: LaneGradient,
}

impl PairTerms {
    /// `alpha L3D + beta L2D` with labels, `beta L2D + sigma_h` without.
    pub fn geometric(&self, w: &LossWeights, has_3d: bool) -> f64 {
        if has_3d {
            w.alpha * (self.l_bev + self.l_h + self.l_z) + w.beta * (self.l_per + self.l_v)
        } else {
            w.beta * (self.l_per + self.l_v) + self.l_reg
        }
    }

    pub fn geometric_gradient(&self, w: &LossWeights, has_3d: bool) -> LaneGradient {
        let mut g = LaneGradient::zeros(self.grad_per.heights.len());
        if has_3d {
            g.add_scaled(&self.grad_bev, w.alpha);
            g.add_scaled(&self.grad_h, w.alpha);
            g.add_scaled(&self.grad_z, w.alpha);
        } else {
            g.add_scaled(&self.grad_reg, 1.0);
        }
        g.add_scaled(&self.grad_per, w.beta);
        g.add_scaled(&self.grad_v, w.beta);
        g
    }
}

/// Every per-pair term for `pred` against `target`.
pub fn pair_terms(
    pred: &DecoupledLane3D,
    target: &PairTarget,
    k: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<PairTerms> {
    let n = pred.profile.heights.len();
    let per = perspective_losses(pred, k, &target.gt2d, &cfg.perspective)?;
    let mut t = PairTerms {
        l_bev: 0.0,
        l_h: 0.0,
        l_z: 0.0,
        l_per: per.l_per,
        l_v: per.l_v,
        l_reg: 0.0,
        overlap_rows: per.overlap_rows,
        grad_bev: LaneGradient::zeros(n),
        grad_h: LaneGradient::zeros(n),
        grad_z: LaneGradient::zeros(n),
        grad_per: per.grad_per,
        grad_v: per.grad_v,
        grad_reg: LaneGradient::zeros(n),
    };
    match &target.gt3d {
        Some(gt) => {
            let (l, g) = bev_iou_loss(pred, &gt.zs, &gt.xs, &cfg.bev)?;
            t.l_bev = l;
            t.grad_bev.curve = g;
            let (l, g) = height_loss(&pred.profile.heights, &gt.heights)?;
            t.l_h = l;
            t.grad_h.heights = g;
            let (l, g) = endpoint_z_loss((pred.z_min(), pred.z_max()), (gt.z_min, gt.z_max));
            t.l_z = l;
            t.grad_z.z_min = g[0];
            t.grad_z.z_max = g[1];
        }
        None => {
            let (l, g) = height_variance_reg(&pred.profile.heights);
            t.l_reg = l;
            t.grad_reg.heights = g;
        }
    }
    Ok(t)
}

/// Everything [`total_loss`] needs besides the lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub bev: IoUConfig,
    pub perspective: IoUConfig,
    pub weights: LossWeights,
    pub row_step: f64,
    pub match_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bev: IoUConfig::bev_default(),
            perspective: IoUConfig::perspective_default(),
            weights: LossWeights::default(),
            row_step: crate::assignment::DEFAULT_ROW_STEP,
            match_threshold: crate::assignment::DEFAULT_MATCH_THRESHOLD,
        }
    }
}

/// Loss terms for a set of predictions, with the per-prediction gradient.
///
/// Geometric terms are averaged over matched pairs; `l_cls` is averaged over
/// all predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_bev: f64,
    pub l_h: f64,
    pub l_z: f64,
    pub l_per: f64,
    pub l_v: f64,
    pub l_reg: f64,
    pub total: f64,
    pub has_3d: bool,
    pub matches: MatchResult,
    /// One gradient per prediction.
    pub gradients: Vec<LaneGradient>,
}

/// Combines the terms into the total objective for the supervision mode.
pub fn combine_terms(
    l_cls: f64,
    l3d: (f64, f64, f64),
    l2d: (f64, f64),
    l_reg: f64,
    w: &LossWeights,
    has_3d: bool,
) -> f64 {
    if has_3d {
        l_cls + w.alpha * (l3d.0 + l3d.1 + l3d.2) + w.beta * (l2d.0 + l2d.1)
    } else {
        l_cls + w.beta * (l2d.0 + l2d.1) + l_reg
    }
}

/// Resamples `lane` on `grid`, or `None` when it covers no grid row.
pub(crate) fn try_resample(lane: &Lane2D, grid: &RowGrid) -> Option<ResampledLane2D> {
    resample_on_grid(lane, grid).ok()
}

/// Matches predictions to ground truths in the image and evaluates the full
/// objective. `gt3d`, when present, must be parallel to `gt2d`.
pub fn total_loss(
    preds: &[DecoupledLane3D],
    gt2d: &[Lane2D],
    gt3d: Option<&[Vec<Point3D>]>,
    k: &CameraIntrinsics,
    image: ImageSpec,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if let Some(g3) = gt3d {
        if g3.len() != gt2d.len() {
            return Err(Error::LengthMismatch {
                left: g3.len(),
                right: gt2d.len(),
            });
        }
    }
    let has_3d = gt3d.is_some();
    let grid = RowGrid::new(image, cfg.row_step)?;
    let gt_resampled = gt2d
        .iter()
        .map(|g| resample_on_grid(g, &grid))
        .collect::<Result<Vec<_>>>()?;
    let pred_resampled = preds
        .iter()
        .map(|p| {
            Ok(try_resample(
                &project_lane(k, p, cfg.perspective.sample_count)?,
                &grid,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<Vec<f64>> = pred_resampled
        .iter()
        .map(|p| {
            gt_resampled
                .iter()
                .map(|g| match p {
                    Some(p) => matching_cost(p, g),
                    None => Ok(f64::INFINITY),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let matches = hungarian_assign(&costs, cfg.match_threshold)?;

    let mut labels = vec![false; preds.len()];
    for &(p, _, _) in &matches.pairs {
        labels[p] = true;
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let (l_cls, g_cls) = classification_loss(&scores, &labels)?;
    let mut gradients: Vec<LaneGradient> = preds
        .iter()
        .zip(&g_cls)
        .map(|(p, &g)| {
            let mut lg = LaneGradient::zeros(p.profile.heights.len());
            lg.score = g;
            lg
        })
        .collect();

    let m = matches.pairs.len();
    let (mut l_bev, mut l_h, mut l_z, mut l_per, mut l_v, mut l_reg) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    if m > 0 {
        let inv = 1.0 / m as f64;
        for &(pi, gi, _) in &matches.pairs {
            let pred = &preds[pi];
            let target = PairTarget {
                gt2d: gt_resampled[gi].clone(),
                gt3d: match gt3d {
                    Some(g3) => Some(Gt3dTarget::from_points(
                        &g3[gi],
                        pred.profile.heights.len(),
                    )?),
                    None => None,
                },
            };
            let t = pair_terms(pred, &target, k, cfg)?;
            l_bev += t.l_bev;
            l_h += t.l_h;
            l_z += t.l_z;
            l_per += t.l_per;
            l_v += t.l_v;
            l_reg += t.l_reg;
            gradients[pi].add_scaled(&t.geometric_gradient(&cfg.weights, has_3d), inv);
        }
        l_bev *= inv;
        l_h *= inv;
        l_z *= inv;
        l_per *= inv;
        l_v *= inv;
        l_reg *= inv;
    }
    let total = combine_terms(
        l_cls,
        (l_bev, l_h, l_z),
        (l_per, l_v),
        l_reg,
        &cfg.weights,
        has_3d,
    );
    Ok(LossBreakdown {
        l_cls,
        l_bev,
        l_h,
        l_z,
        l_per,
        l_v,
        l_reg,
        total,
        has_3d,
        matches,
        gradients,
    })
}
