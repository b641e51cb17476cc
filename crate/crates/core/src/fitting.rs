//! Recovering decoupled lanes from ground truth.
//!
//! With 3D labels the BEV curve and heights come from closed-form least
//! squares and are then refined on the full objective. With only 2D labels
//! the lane is warm-started from a flat-ground back-projection and refined
//! on the 2D loss plus the height-spread regulariser. A plain image-space
//! polynomial fit is provided as the baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::MatchResult;
use crate::assignment::{resample_on_grid, ResampledLane2D, RowGrid};
use crate::camera::{invert_to_ground, CameraIntrinsics, ImageSpec, Lane2D};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_heights, BevCurve, DecoupledLane3D, HeightProfile, Point3D};
use crate::losses::{
    classification_loss, combine_terms, pair_terms, perspective_losses, Gt3dTarget, LossBreakdown,
    LossConfig, PairTarget, PairTerms,
};

/// Curve family used when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveModel {
    /// Polynomial of the given order (2, 3 or 4).
    Poly(u8),
    /// Cubic Bezier with control points evenly spaced in depth.
    Bezier,
}

impl Default for CurveModel {
    fn default() -> Self {
        CurveModel::Poly(3)
    }
}

impl std::str::FromStr for CurveModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" => Ok(CurveModel::Poly(2)),
            "3" => Ok(CurveModel::Poly(3)),
            "4" => Ok(CurveModel::Poly(4)),
            "bezier" => Ok(CurveModel::Bezier),
            other => Err(Error::InvalidParameter(format!(
                "curve order must be 2, 3, 4 or bezier, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for CurveModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CurveModel::Poly(o) => write!(f, "{o}"),
            CurveModel::Bezier => f.write_str("bezier"),
        }
    }
}

/// Optimiser settings for the refinement fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Stop once the (preconditioned) gradient norm falls to this value.
    pub convergence_tol: f64,
    pub curve: CurveModel,
    /// Lower bound on `z_min`, and on `z_max - z_min`, meters.
    pub z_floor: f64,
    /// Iterations without a new best before the step is halved.
    pub patience: usize,
    /// Stop once the step has been halved below `step_size * min_step_ratio`.
    pub min_step_ratio: f64,
    /// Camera height assumed by the flat-ground warm start, meters.
    pub camera_height: f64,
    pub keypoints: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 1e-2,
            momentum: 0.9,
            convergence_tol: 1e-9,
            curve: CurveModel::Poly(3),
            z_floor: 0.1,
            patience: 30,
            min_step_ratio: 1e-4,
            camera_height: 1.5,
            keypoints: crate::geometry::DEFAULT_KEYPOINTS,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(
                "fit needs max_iters >= 1, step_size > 0 and momentum in [0, 1)".into(),
            ));
        }
        if !(self.z_floor > 0.0) || self.keypoints < 2 {
            return Err(Error::InvalidParameter(
                "fit needs z_floor > 0 and at least 2 keypoints".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a refinement fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub lane: DecoupledLane3D,
    pub final_loss: LossBreakdown,
    /// Objective (without the classification term) at the returned lane.
    pub objective: f64,
    /// Objective at the initial lane.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares polynomial in the BEV plane. Orders up to 3 fill `curve`;
/// order 4 also sets `quartic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevFit {
    pub curve: BevCurve,
    pub quartic: f64,
    pub order: u8,
    pub rms_residual: f64,
    pub max_residual: f64,
}

impl BevFit {
    pub fn eval(&self, z: f64) -> f64 {
        self.curve.eval(z) + self.quartic * z.powi(4)
    }
}

fn count_distinct(values: &[f64]) -> usize {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Least-squares polynomial `y = sum c_k s^k` (ascending coefficients)
/// through QR of the column-scaled Vandermonde matrix.
pub fn polyfit(s: &[f64], y: &[f64], order: usize) -> Result<Vec<f64>> {
    if s.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: y.len(),
        });
    }
    let distinct = count_distinct(s);
    if distinct < order + 1 {
        return Err(Error::RankDeficient {
            distinct,
            needed: order + 1,
        });
    }
    if !s.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    let scale = s
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let m = s.len();
    let a = DMatrix::from_fn(m, order + 1, |i, k| (s[i] / scale).powi(k as i32));
    let b = DVector::from_column_slice(y);
    let qr = a.qr();
    let rhs = qr.q().transpose() * b;
    let sol = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient {
            distinct,
            needed: order + 1,
        })?;
    Ok((0..=order).map(|k| sol[k] / scale.powi(k as i32)).collect())
}

fn eval_ascending(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * s + ck)
}

/// Fits `x(z)` to the points' BEV coordinates with a polynomial of order
/// 2, 3 or 4.
pub fn fit_bev_least_squares(points: &[Point3D], order: u8) -> Result<BevFit> {
    if !(2..=4).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "order must be 2, 3 or 4, got {order}"
        )));
    }
    let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let c = polyfit(&zs, &xs, order as usize)?;
    let get = |k: usize| c.get(k).copied().unwrap_or(0.0);
    let (rms, max) = residuals(&zs, &xs, |z| eval_ascending(&c, z));
    Ok(BevFit {
        curve: BevCurve::from_coefficients([get(3), get(2), get(1), get(0)]),
        quartic: get(4),
        order,
        rms_residual: rms,
        max_residual: max,
    })
}

fn residuals(s: &[f64], y: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (sq, max) = s.iter().zip(y).fold((0.0, 0.0f64), |(sq, mx), (&si, &yi)| {
        let r = (yi - f(si)).abs();
        (sq + r * r, mx.max(r))
    });
    ((sq / s.len() as f64).sqrt(), max)
}

/// Cubic Bezier `x(t)` with `z = z0 + t (z1 - z0)`, `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BezierCurve {
    /// Lateral position of the four control points.
    pub control: [f64; 4],
    pub z0: f64,
    pub z1: f64,
}

impl BezierCurve {
    pub fn eval(&self, z: f64) -> f64 {
        let t = (z - self.z0) / (self.z1 - self.z0);
        let s = 1.0 - t;
        let p = &self.control;
        s * s * s * p[0] + 3.0 * s * s * t * p[1] + 3.0 * s * t * t * p[2] + t * t * t * p[3]
    }

    /// Power-basis form `(a, b, c, d)` in `z`.
    pub fn to_power(&self) -> BevCurve {
        let p = &self.control;
        // x(t) = k3 t^3 + k2 t^2 + k1 t + k0
        let k0 = p[0];
        let k1 = 3.0 * (p[1] - p[0]);
        let k2 = 3.0 * (p[0] - 2.0 * p[1] + p[2]);
        let k3 = p[3] - p[0] + 3.0 * (p[1] - p[2]);
        // t = (z - z0) / w
        let w = self.z1 - self.z0;
        let z0 = self.z0;
        let (q3, q2, q1) = (k3 / (w * w * w), k2 / (w * w), k1 / w);
        BevCurve {
            a: q3,
            b: q2 - 3.0 * q3 * z0,
            c: q1 - 2.0 * q2 * z0 + 3.0 * q3 * z0 * z0,
            d: k0 - q1 * z0 + q2 * z0 * z0 - q3 * z0 * z0 * z0,
        }
    }

    /// Control points reproducing `curve` exactly over `[z0, z1]`.
    pub fn from_power(curve: &BevCurve, z0: f64, z1: f64) -> Result<Self> {
        if !(z1 > z0) {
            return Err(Error::InvalidParameter(
                "Bezier span must be increasing".into(),
            ));
        }
        let w = z1 - z0;
        // x(t) = X(z0 + w t): expand into power basis of t.
        let BevCurve { a, b, c, d } = *curve;
        let k0 = curve.eval(z0);
        let k1 = w * (3.0 * a * z0 * z0 + 2.0 * b * z0 + c);
        let k2 = w * w * (3.0 * a * z0 + b);
        let k3 = w * w * w * a;
        let _ = d;
        let p0 = k0;
        let p1 = p0 + k1 / 3.0;
        let p2 = k2 / 3.0 - p0 + 2.0 * p1;
        let p3 = k3 + p0 - 3.0 * (p1 - p2);
        Ok(Self {
            control: [p0, p1, p2, p3],
            z0,
            z1,
        })
    }

    /// Jacobian of `to_power` with respect to the control points:
    /// `jac[i][j] = d coef_i / d control_j`.
    fn power_jacobian(z0: f64, z1: f64) -> [[f64; 4]; 4] {
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut control = [0.0; 4];
            control[j] = 1.0;
            let c = BezierCurve { control, z0, z1 }.to_power().coefficients();
            for i in 0..4 {
                jac[i][j] = c[i];
            }
        }
        jac
    }
}

/// Least-squares cubic Bezier over the points' depth span. Spans the same
/// function space as the cubic polynomial fit.
pub fn fit_bev_bezier(points: &[Point3D]) -> Result<(BezierCurve, f64)> {
    let fit = fit_bev_least_squares(points, 3)?;
    let (z0, z1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.z), b.max(p.z))
        });
    Ok((
        BezierCurve::from_power(&fit.curve, z0, z1)?,
        fit.rms_residual,
    ))
}

/// Heights at `n` keypoints over `[z_min, z_max]` by linear interpolation
/// of the point sequence (ordered by `z`).
pub fn fit_heights_direct(
    points: &[Point3D],
    n: usize,
    z_min: f64,
    z_max: f64,
) -> Result<HeightProfile> {
    let heights = interpolate_heights(points, n, z_min, z_max)?;
    HeightProfile::new(heights, z_min, z_max)
}

/// Image-space polynomial `u(v)` fitted to a 2D lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveFit {
    /// Ascending coefficients in `v`.
    pub coeffs: Vec<f64>,
    pub max_residual: f64,
    pub rms_residual: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl PerspectiveFit {
    pub fn eval(&self, v: f64) -> f64 {
        eval_ascending(&self.coeffs, v)
    }

    /// The fitted curve as a polyline from `v_max` (near) to `v_min` (far).
    pub fn to_lane(&self, count: usize) -> Lane2D {
        let count = count.max(2);
        let points = (0..count)
            .map(|i| {
                let v = self.v_max + (self.v_min - self.v_max) * i as f64 / (count - 1) as f64;
                (self.eval(v), v)
            })
            .collect();
        Lane2D { points }
    }
}

/// Least-squares `u(v)` of the given order directly in the image.
pub fn fit_perspective_baseline(gt2d: &Lane2D, order: u8) -> Result<PerspectiveFit> {
    gt2d.validate()?;
    let vs: Vec<f64> = gt2d.points.iter().map(|p| p.1).collect();
    let us: Vec<f64> = gt2d.points.iter().map(|p| p.0).collect();
    let coeffs = polyfit(&vs, &us, order as usize)?;
    let (rms, max) = residuals(&vs, &us, |v| eval_ascending(&coeffs, v));
    let (v_min, v_max) = gt2d.v_extent();
    Ok(PerspectiveFit {
        coeffs,
        max_residual: max,
        rms_residual: rms,
        v_min,
        v_max,
    })
}

/// Largest horizontal reprojection error of `lane` against 3D ground-truth
/// points, comparing each point with the lane projected at the same depth.
pub fn reprojection_residual(
    lane: &DecoupledLane3D,
    k: &CameraIntrinsics,
    gt3d: &[Point3D],
) -> Result<f64> {
    gt3d.iter().try_fold(0.0f64, |m, p| {
        let (ug, _) = k.project(p)?;
        let (up, _) = k.project(&lane.point_at(p.z))?;
        Ok(m.max((up - ug).abs()))
    })
}

/// Largest horizontal error over rows shared by the projected lane and a
/// resampled 2D ground truth.
pub fn reprojection_residual_rows(
    lane: &DecoupledLane3D,
    k: &CameraIntrinsics,
    gt: &ResampledLane2D,
    samples: usize,
) -> Result<f64> {
    let proj = crate::camera::project_lane(k, lane, samples)?;
    let p = resample_on_grid(&proj, &gt.grid)?;
    Ok(p.u
        .iter()
        .zip(&gt.u)
        .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
        .fold(0.0, f64::max))
}

/// Flat-ground warm start: back-projects the 2D lane onto a plane
/// `camera_height` below the camera and least-squares the result.
pub fn ipm_init(gt2d: &Lane2D, k: &CameraIntrinsics, cfg: &FitConfig) -> Result<DecoupledLane3D> {
    let mut pts: Vec<Point3D> = gt2d
        .points
        .iter()
        .filter_map(|&(u, v)| invert_to_ground(k, u, v, cfg.camera_height).ok())
        .collect();
    pts.sort_by(|a, b| a.z.total_cmp(&b.z));
    if pts.len() < 2 {
        return Err(Error::DegenerateInput(
            "fewer than 2 lane points lie below the horizon".into(),
        ));
    }
    let order = match cfg.curve {
        CurveModel::Poly(o) => o.min(3),
        CurveModel::Bezier => 3,
    };
    let distinct = count_distinct(&pts.iter().map(|p| p.z).collect::<Vec<_>>());
    let order = order.min(distinct.saturating_sub(1).max(1) as u8);
    let curve = if order < 2 {
        BevCurve::straight(pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64)
    } else {
        fit_bev_least_squares(&pts, order)?.curve
    };
    let z_min = pts[0].z.max(cfg.z_floor);
    let z_max = pts[pts.len() - 1].z.max(z_min + cfg.z_floor);
    let profile = HeightProfile::flat(cfg.camera_height, cfg.keypoints, z_min, z_max)?;
    DecoupledLane3D::new(curve, profile, 1.0)
}

/// How the optimiser sees the curve coefficients.
enum CurveParam {
    /// Power basis scaled by powers of a reference depth so all four
    /// coefficients move lateral positions by comparable amounts.
    Power { scale: [f64; 4], freeze_cubic: bool },
    Bezier {
        z0: f64,
        z1: f64,
        jac: [[f64; 4]; 4],
    },
}

struct Optimizer<'a> {
    template: DecoupledLane3D,
    curve: CurveParam,
    target: &'a PairTarget,
    k: &'a CameraIntrinsics,
    loss: &'a LossConfig,
    has_3d: bool,
    z_floor: f64,
}

impl Optimizer<'_> {
    fn encode(&self, lane: &DecoupledLane3D) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(lane.profile.heights.len() + 6);
        match &self.curve {
            CurveParam::Power { scale, .. } => {
                let c = lane.curve.coefficients();
                v.extend((0..4).map(|i| c[i] / scale[i]));
            }
            CurveParam::Bezier { z0, z1, .. } => {
                v.extend_from_slice(&BezierCurve::from_power(&lane.curve, *z0, *z1)?.control);
            }
        }
        v.extend_from_slice(&lane.profile.heights);
        v.push(lane.profile.z_min);
        v.push(lane.profile.z_max);
        Ok(v)
    }

    fn decode(&self, psi: &[f64]) -> DecoupledLane3D {
        let n = psi.len() - 6;
        let curve = match &self.curve {
            CurveParam::Power { scale, .. } => BevCurve::from_coefficients([
                psi[0] * scale[0],
                psi[1] * scale[1],
                psi[2] * scale[2],
                psi[3] * scale[3],
            ]),
            CurveParam::Bezier { z0, z1, .. } => BezierCurve {
                control: [psi[0], psi[1], psi[2], psi[3]],
                z0: *z0,
                z1: *z1,
            }
            .to_power(),
        };
        DecoupledLane3D {
            curve,
            profile: HeightProfile {
                heights: psi[4..4 + n].to_vec(),
                z_min: psi[4 + n],
                z_max: psi[5 + n],
            },
            score: self.template.score,
        }
    }

    fn project_feasible(&self, psi: &mut [f64]) {
        let n = psi.len() - 6;
        psi[4 + n] = psi[4 + n].max(self.z_floor);
        psi[5 + n] = psi[5 + n].max(psi[4 + n] + self.z_floor);
        if let CurveParam::Power {
            freeze_cubic: true, ..
        } = self.curve
        {
            psi[0] = 0.0;
        }
    }

    fn evaluate(&self, psi: &[f64]) -> Result<(f64, Vec<f64>, PairTerms)> {
        let lane = self.decode(psi);
        let terms = pair_terms(&lane, self.target, self.k, self.loss)?;
        let f = terms.geometric(&self.loss.weights, self.has_3d);
        let g = terms.geometric_gradient(&self.loss.weights, self.has_3d);
        let mut out = Vec::with_capacity(psi.len());
        match &self.curve {
            CurveParam::Power {
                scale,
                freeze_cubic,
            } => {
                for i in 0..4 {
                    out.push(g.curve[i] * scale[i]);
                }
                if *freeze_cubic {
                    out[0] = 0.0;
                }
            }
            CurveParam::Bezier { jac, .. } => {
                for j in 0..4 {
                    out.push((0..4).map(|i| g.curve[i] * jac[i][j]).sum());
                }
            }
        }
        out.extend_from_slice(&g.heights);
        out.push(g.z_min);
        out.push(g.z_max);
        Ok((f, out, terms))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn breakdown(
    lane: &DecoupledLane3D,
    terms: &PairTerms,
    loss: &LossConfig,
    has_3d: bool,
) -> Result<LossBreakdown> {
    let (l_cls, g_cls) = classification_loss(&[lane.score], &[true])?;
    let mut grad = terms.geometric_gradient(&loss.weights, has_3d);
    grad.score = g_cls[0];
    let total = combine_terms(
        l_cls,
        (terms.l_bev, terms.l_h, terms.l_z),
        (terms.l_per, terms.l_v),
        terms.l_reg,
        &loss.weights,
        has_3d,
    );
    Ok(LossBreakdown {
        l_cls,
        l_bev: terms.l_bev,
        l_h: terms.l_h,
        l_z: terms.l_z,
        l_per: terms.l_per,
        l_v: terms.l_v,
        l_reg: terms.l_reg,
        total,
        has_3d,
        matches: MatchResult {
            pairs: vec![(0, 0, 0.0)],
            unmatched_predictions: Vec::new(),
            unmatched_ground_truths: Vec::new(),
        },
        gradients: vec![grad],
    })
}

fn refine(
    init: &DecoupledLane3D,
    target: &PairTarget,
    k: &CameraIntrinsics,
    cfg: &FitConfig,
    loss: &LossConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    init.validate()?;
    let has_3d = target.gt3d.is_some();
    let curve = match cfg.curve {
        CurveModel::Poly(4) => {
            return Err(Error::InvalidParameter(
                "order-4 curves are available for least squares only; lanes store cubics".into(),
            ))
        }
        CurveModel::Poly(o) => {
            let zr = init.z_max();
            CurveParam::Power {
                scale: [1.0 / (zr * zr * zr), 1.0 / (zr * zr), 1.0 / zr, 1.0],
                freeze_cubic: o == 2,
            }
        }
        CurveModel::Bezier => CurveParam::Bezier {
            z0: init.z_min(),
            z1: init.z_max(),
            jac: BezierCurve::power_jacobian(init.z_min(), init.z_max()),
        },
    };
    let opt = Optimizer {
        template: init.clone(),
        curve,
        target,
        k,
        loss,
        has_3d,
        z_floor: cfg.z_floor,
    };

    let mut psi = opt.encode(init)?;
    opt.project_feasible(&mut psi);
    let (f0, g0, terms0) = opt.evaluate(&psi)?;
    if !f0.is_finite() {
        return Err(if terms0.overlap_rows == 0 {
            Error::NoOverlap
        } else {
            Error::NonFinite { iteration: 0 }
        });
    }

    let mut best = (f0, psi.clone(), terms0, norm(&g0));
    let mut velocity = vec![0.0; psi.len()];
    let mut step = cfg.step_size;
    let mut since_best = 0usize;
    let (mut f, mut g) = (f0, g0);
    let mut iterations = 0usize;
    while iterations < cfg.max_iters {
        if norm(&g) <= cfg.convergence_tol {
            break;
        }
        for ((p, v), gi) in psi.iter_mut().zip(velocity.iter_mut()).zip(&g) {
            *v = cfg.momentum * *v - step * gi;
            *p += *v;
        }
        opt.project_feasible(&mut psi);
        iterations += 1;
        let (nf, ng, terms) = opt.evaluate(&psi)?;
        if !nf.is_finite() {
            if terms.overlap_rows == 0 {
                // Drifted off the ground truth: restart from the best point
                // with a smaller step.
                psi.clone_from(&best.1);
                velocity.iter_mut().for_each(|v| *v = 0.0);
                step *= 0.5;
                let (bf, bg, _) = opt.evaluate(&psi)?;
                f = bf;
                g = bg;
                if step < cfg.step_size * cfg.min_step_ratio {
                    break;
                }
                continue;
            }
            return Err(Error::NonFinite {
                iteration: iterations,
            });
        }
        if nf > f {
            // adaptive restart
            velocity.iter_mut().for_each(|v| *v = 0.0);
        }
        f = nf;
        g = ng;
        if f < best.0 {
            best = (f, psi.clone(), terms, norm(&g));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                step *= 0.5;
                since_best = 0;
                psi.clone_from(&best.1);
                velocity.iter_mut().for_each(|v| *v = 0.0);
                let (bf, bg, _) = opt.evaluate(&psi)?;
                f = bf;
                g = bg;
                if step < cfg.step_size * cfg.min_step_ratio {
                    break;
                }
            }
        }
    }
    let _ = f;

    let (best_f, best_psi, best_terms, best_gnorm) = best;
    let lane = opt.decode(&best_psi);
    let final_loss = breakdown(&lane, &best_terms, loss, has_3d)?;
    Ok(FitReport {
        lane,
        final_loss,
        objective: best_f,
        initial_objective: f0,
        iterations,
        converged: best_gnorm <= cfg.convergence_tol,
    })
}

/// Refines `init` against a 2D lane alone, minimising
/// `beta (L_per + L_v) + sigma_h`.
///
/// The image constrains the lane only up to a common scale of depth, lateral
/// offset and height; the regulariser keeps heights flat, and the warm start
/// fixes the scale.
pub fn fit_2d_projective(
    gt2d: &Lane2D,
    k: &CameraIntrinsics,
    image: ImageSpec,
    init: &DecoupledLane3D,
    cfg: &FitConfig,
    loss: &LossConfig,
) -> Result<FitReport> {
    let grid = RowGrid::new(image, loss.row_step)?;
    let gt = resample_on_grid(gt2d, &grid)?;
    if !perspective_losses(init, k, &gt, &loss.perspective)?.overlaps() {
        return Err(Error::NoOverlap);
    }
    let target = PairTarget {
        gt2d: gt,
        gt3d: None,
    };
    refine(init, &target, k, cfg, loss)
}

/// Least-squares initialisation from 3D labels followed by refinement on
/// `alpha L_3D + beta L_2D`.
pub fn fit_3d(
    gt2d: &Lane2D,
    gt3d: &[Point3D],
    k: &CameraIntrinsics,
    image: ImageSpec,
    cfg: &FitConfig,
    loss: &LossConfig,
) -> Result<FitReport> {
    let init = init_from_3d(gt3d, cfg)?;
    let grid = RowGrid::new(image, loss.row_step)?;
    let gt = resample_on_grid(gt2d, &grid)?;
    let target = PairTarget {
        gt2d: gt,
        gt3d: Some(Gt3dTarget::from_points(gt3d, cfg.keypoints)?),
    };
    refine(&init, &target, k, cfg, loss)
}

/// Least-squares BEV curve and directly interpolated heights.
pub fn init_from_3d(gt3d: &[Point3D], cfg: &FitConfig) -> Result<DecoupledLane3D> {
    if gt3d.len() < 2 {
        return Err(Error::DegenerateInput(
            "3D lane needs at least 2 points".into(),
        ));
    }
    let curve = match cfg.curve {
        CurveModel::Poly(o) if o <= 3 => fit_bev_least_squares(gt3d, o)?.curve,
        CurveModel::Bezier => fit_bev_bezier(gt3d)?.0.to_power(),
        CurveModel::Poly(o) => {
            return Err(Error::InvalidParameter(format!(
                "order-{o} curves are available for least squares only; lanes store cubics"
            )))
        }
    };
    let z_min = gt3d[0].z;
    let z_max = gt3d[gt3d.len() - 1].z;
    let profile = fit_heights_direct(gt3d, cfg.keypoints, z_min, z_max)?;
    DecoupledLane3D::new(curve, profile, 1.0)
}
