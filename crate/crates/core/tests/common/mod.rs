//! Independent reference implementations shared by the integration tests and
//! the acceptance harness. Nothing here calls the routine it checks.

#![allow(dead_code)]

use bevlane::datagen::{generate_frame, GroundModel, SceneSpec};
use bevlane::fitting::{init_from_3d, FitConfig};
use bevlane::geometry::{BevCurve, DecoupledLane3D, Point3D};
use bevlane::losses::{
    bev_iou_loss, classification_loss, endpoint_z_loss, height_loss, height_variance_reg,
    perspective_losses, total_loss, IoUConfig, LossConfig,
};
use bevlane::{resample_lane, CameraIntrinsics, ImageSpec, Lane2D, ResampledLane2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum total cost over all maximum-cardinality one-to-one assignments,
/// by exhaustive search.
pub fn brute_min_assignment(costs: &[Vec<f64>]) -> f64 {
    let p = costs.len();
    let g = if p == 0 { 0 } else { costs[0].len() };
    if p == 0 || g == 0 {
        return 0.0;
    }
    let t: Vec<Vec<f64>> = if p <= g {
        costs.to_vec()
    } else {
        (0..g)
            .map(|j| (0..p).map(|i| costs[i][j]).collect())
            .collect()
    };
    fn rec(t: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == t.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(t, row + 1, used, acc + t[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(&t, 0, &mut vec![false; t[0].len()], 0.0, &mut best);
    best
}

/// Every maximum-cardinality assignment as `(pred, gt)` pairs.
pub fn all_assignments(p: usize, g: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        p: usize,
        g: usize,
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let need = p.min(g);
        if cur.len() == need {
            out.push(cur.clone());
            return;
        }
        if i == p {
            return;
        }
        // remaining predictions must still be able to fill the matching
        if p - i > need - cur.len() {
            rec(p, g, i + 1, used, cur, out);
        }
        for j in 0..g {
            if !used[j] {
                used[j] = true;
                cur.push((i, j));
                rec(p, g, i + 1, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(p, g, 0, &mut vec![false; g], &mut Vec::new(), &mut out);
    out
}

/// Distance from `(px, py)` to segment `ab`, by case analysis on the foot
/// of the perpendicular.
fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (px - a.0, py - a.1);
    let along = wx * ex + wy * ey;
    let len2 = ex * ex + ey * ey;
    if along <= 0.0 || len2 == 0.0 {
        return wx.hypot(wy);
    }
    if along >= len2 {
        return (px - b.0).hypot(py - b.1);
    }
    (wx * ey - wy * ex).abs() / len2.sqrt()
}

/// Per-pixel mask: pixel centres within `(width - 1) / 2` of the polyline.
pub fn oracle_mask(points: &[(f64, f64)], w: u32, h: u32, width: f64) -> Vec<bool> {
    let r = (width - 1.0) / 2.0;
    let mut m = vec![false; (w * h) as usize];
    for row in 0..h {
        for col in 0..w {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let d = points
                .windows(2)
                .map(|s| segment_distance(px, py, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            m[(row * w + col) as usize] = d <= r;
        }
    }
    m
}

pub fn oracle_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// TP/FP/FN per threshold from the assignment maximising total IoU, found
/// exhaustively. `None` when optimal assignments disagree on a count.
pub fn oracle_f1_counts(
    preds: &[Vec<(f64, f64)>],
    gts: &[Vec<(f64, f64)>],
    w: u32,
    h: u32,
    width: f64,
    thresholds: &[f64],
) -> Option<Vec<(usize, usize, usize)>> {
    let pm: Vec<Vec<bool>> = preds.iter().map(|p| oracle_mask(p, w, h, width)).collect();
    let gm: Vec<Vec<bool>> = gts.iter().map(|g| oracle_mask(g, w, h, width)).collect();
    let iou: Vec<Vec<f64>> = pm
        .iter()
        .map(|p| gm.iter().map(|g| oracle_iou(p, g)).collect())
        .collect();
    let assignments = all_assignments(preds.len(), gts.len());
    let score = |a: &Vec<(usize, usize)>| a.iter().map(|&(p, g)| 1.0 - iou[p][g]).sum::<f64>();
    let best = assignments.iter().map(score).fold(f64::INFINITY, f64::min);
    let count = |a: &Vec<(usize, usize)>| -> Vec<(usize, usize, usize)> {
        thresholds
            .iter()
            .map(|&t| {
                let tp = a.iter().filter(|&&(p, g)| iou[p][g] >= t).count();
                (tp, preds.len() - tp, gts.len() - tp)
            })
            .collect()
    };
    let optimal: Vec<_> = assignments
        .iter()
        .filter(|a| (score(a) - best).abs() <= 1e-12)
        .map(count)
        .collect();
    if optimal.iter().all(|c| *c == optimal[0]) {
        optimal.into_iter().next()
    } else {
        None
    }
}

/// Least squares through the normal equations, solved by Gaussian
/// elimination with partial pivoting. Ascending coefficients.
pub fn normal_equations_fit(s: &[f64], y: &[f64], order: usize) -> Vec<f64> {
    let n = order + 1;
    let mut a = vec![vec![0.0; n + 1]; n];
    for (&si, &yi) in s.iter().zip(y) {
        let pw: Vec<f64> = (0..n).map(|k| si.powi(k as i32)).collect();
        for r in 0..n {
            for c in 0..n {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][n] += pw[r] * yi;
        }
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|r| a[r][n] / a[r][r]).collect()
}

/// Symmetric chamfer distance with exhaustive point-to-segment search.
pub fn chamfer_oracle(a: &[Point3D], b: &[Point3D]) -> f64 {
    fn to_line(p: &Point3D, line: &[Point3D]) -> f64 {
        let mut best = f64::INFINITY;
        for s in line.windows(2) {
            // minimise |a + t (b - a) - p|^2 over t in [0, 1] by sampling the
            // closed-form vertex and both ends
            let d = [s[1].x - s[0].x, s[1].y - s[0].y, s[1].z - s[0].z];
            let w = [p.x - s[0].x, p.y - s[0].y, p.z - s[0].z];
            let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let wd = w[0] * d[0] + w[1] * d[1] + w[2] * d[2];
            for t in [
                0.0,
                1.0,
                if dd > 0.0 {
                    (wd / dd).clamp(0.0, 1.0)
                } else {
                    0.0
                },
            ] {
                let q = [
                    s[0].x + t * d[0] - p.x,
                    s[0].y + t * d[1] - p.y,
                    s[0].z + t * d[2] - p.z,
                ];
                best = best.min((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt());
            }
        }
        best
    }
    let ab: f64 = a.iter().map(|p| to_line(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| to_line(p, a)).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}

/// A differentiable function of normalised parameters with its claimed
/// gradient at `x`.
pub struct GradCase {
    pub x: Vec<f64>,
    pub analytic: Vec<f64>,
    pub f: Box<dyn Fn(&[f64]) -> f64>,
}

pub enum GradCheck {
    Pass(f64),
    Fail(f64),
    Kink,
}

fn central_differences(case: &GradCase, h: f64) -> Vec<f64> {
    let mut x = case.x.clone();
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            x[i] = xi + h;
            let fp = (case.f)(&x);
            x[i] = xi - h;
            let fm = (case.f)(&x);
            x[i] = xi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Central differences with step `h`, compared in the max norm relative to
/// the larger gradient. A configuration counts as kinked, and is skipped,
/// when the differences at `h` and `h / 10` disagree by more than a tenth of
/// the tolerance: the function is then not smooth on the scale of the step.
pub fn check_gradient(case: &GradCase, h: f64, tol: f64) -> GradCheck {
    let numeric = central_differences(case, h);
    let fine = central_differences(case, h / 10.0);
    let denom = max_abs(&case.analytic).max(max_abs(&numeric));
    let rel = |d: f64| if denom < 1e-12 { d } else { d / denom };
    if rel(max_diff(&numeric, &fine)) > 0.1 * tol {
        return GradCheck::Kink;
    }
    let err = rel(max_diff(&case.analytic, &numeric));
    if err <= tol {
        GradCheck::Pass(err)
    } else {
        GradCheck::Fail(err)
    }
}

/// Normalised parameters: curve coefficients times powers of a reference
/// depth, heights in meters, depth range in units of the reference depth.
#[derive(Clone, Copy)]
pub struct Normalizer {
    pub zr: f64,
}

impl Normalizer {
    pub fn encode(&self, lane: &DecoupledLane3D) -> Vec<f64> {
        let c = lane.curve.coefficients();
        let zr = self.zr;
        let mut v = vec![c[0] * zr.powi(3), c[1] * zr * zr, c[2] * zr, c[3]];
        v.extend_from_slice(&lane.profile.heights);
        v.push(lane.profile.z_min / zr);
        v.push(lane.profile.z_max / zr);
        v.push(lane.score);
        v
    }

    pub fn decode(&self, v: &[f64]) -> DecoupledLane3D {
        let zr = self.zr;
        let n = v.len() - 7;
        let mut raw = vec![v[0] / zr.powi(3), v[1] / (zr * zr), v[2] / zr, v[3]];
        raw.extend_from_slice(&v[4..4 + n]);
        raw.extend_from_slice(&[v[4 + n] * zr, v[5 + n] * zr, v[6 + n]]);
        DecoupledLane3D::from_params(&raw)
    }

    /// Chain rule from raw-parameter gradient to normalised parameters.
    pub fn gradient(&self, raw: &[f64]) -> Vec<f64> {
        let zr = self.zr;
        let n = raw.len() - 7;
        let mut g = vec![raw[0] / zr.powi(3), raw[1] / (zr * zr), raw[2] / zr, raw[3]];
        g.extend_from_slice(&raw[4..4 + n]);
        g.extend_from_slice(&[raw[4 + n] * zr, raw[5 + n] * zr, raw[6 + n]]);
        g
    }
}

/// A ground-truth lane over random uneven ground and a perturbed prediction.
pub struct RandomPair {
    pub gt3d: Vec<Point3D>,
    pub gt2d: Lane2D,
    pub gt_resampled: ResampledLane2D,
    pub pred: DecoupledLane3D,
    pub k: CameraIntrinsics,
    pub image: ImageSpec,
}

pub fn random_pair(r: &mut ChaCha8Rng, keypoints: usize) -> Option<RandomPair> {
    let spec = SceneSpec {
        lateral_offsets: vec![r.random_range(-4.0..4.0)],
        centerline: BevCurve::new(
            r.random_range(-2e-6..2e-6),
            r.random_range(-4e-4..4e-4),
            r.random_range(-0.02..0.02),
            0.0,
        )
        .ok()?,
        ground: GroundModel::sine(r.random_range(0.0..0.3), r.random_range(15.0..40.0)),
        z_range: (r.random_range(3.0..8.0), r.random_range(40.0..80.0)),
        ..SceneSpec::default()
    };
    let frame = generate_frame(&spec).ok()?;
    let gt3d = frame.lanes_3d[0].clone();
    let gt2d = frame.lanes_2d[0].clone();
    let gt_resampled = resample_lane(&gt2d, frame.image, 1.0).ok()?;
    let cfg = FitConfig {
        keypoints,
        ..FitConfig::default()
    };
    let mut pred = init_from_3d(&gt3d, &cfg).ok()?;
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let mut c = pred.curve.coefficients();
    c[3] += 0.3 * nrm.sample(r);
    c[2] += 0.005 * nrm.sample(r);
    c[1] += 1e-4 * nrm.sample(r);
    c[0] += 1e-6 * nrm.sample(r);
    pred.curve = BevCurve::from_coefficients(c);
    for h in &mut pred.profile.heights {
        *h += 0.05 * nrm.sample(r);
    }
    pred.profile.z_min *= r.random_range(0.9..1.1);
    pred.profile.z_max *= r.random_range(0.9..1.1);
    pred.score = r.random_range(0.05..0.95);
    Some(RandomPair {
        gt3d,
        gt2d,
        gt_resampled,
        pred,
        k: frame.intrinsics,
        image: frame.image,
    })
}

pub const GRADIENT_TERMS: [&str; 8] = [
    "L_bev", "L_h", "L_Z", "L_per", "L_v", "sigma_h", "L_cls", "L_total",
];

/// A random configuration for one loss term, or `None` when the draw is
/// unusable (no overlap, sample exactly on a tie).
pub fn gradient_case(term: &str, r: &mut ChaCha8Rng) -> Option<GradCase> {
    let keypoints = 24;
    let pair = random_pair(r, keypoints)?;
    let nz = Normalizer {
        zr: pair.pred.z_max(),
    };
    let x = nz.encode(&pair.pred);
    let loss = LossConfig::default();
    match term {
        "L_bev" => {
            let zs: Vec<f64> = pair.gt3d.iter().map(|p| p.z).collect();
            let xs: Vec<f64> = pair.gt3d.iter().map(|p| p.x).collect();
            let cfg = IoUConfig::bev_default();
            if zs
                .iter()
                .zip(&xs)
                .any(|(z, x)| (pair.pred.curve.eval(*z) - x).abs() < 1e-6)
            {
                return None;
            }
            let (_, g) = bev_iou_loss(&pair.pred, &zs, &xs, &cfg).ok()?;
            let mut raw = vec![0.0; x.len()];
            raw[..4].copy_from_slice(&g);
            Some(GradCase {
                analytic: nz.gradient(&raw),
                x,
                f: Box::new(move |v| bev_iou_loss(&nz.decode(v), &zs, &xs, &cfg).unwrap().0),
            })
        }
        "L_h" => {
            let gt: Vec<f64> = (0..keypoints).map(|_| r.random_range(1.0..2.0)).collect();
            if pair
                .pred
                .profile
                .heights
                .iter()
                .zip(&gt)
                .any(|(p, g)| (p - g).abs() < 1e-6)
            {
                return None;
            }
            let (_, g) = height_loss(&pair.pred.profile.heights, &gt).ok()?;
            let mut raw = vec![0.0; x.len()];
            raw[4..4 + keypoints].copy_from_slice(&g);
            Some(GradCase {
                analytic: nz.gradient(&raw),
                x,
                f: Box::new(move |v| height_loss(&nz.decode(v).profile.heights, &gt).unwrap().0),
            })
        }
        "L_Z" => {
            let gt = (r.random_range(2.0..10.0), r.random_range(30.0..90.0));
            let (_, g) = endpoint_z_loss((pair.pred.z_min(), pair.pred.z_max()), gt);
            let mut raw = vec![0.0; x.len()];
            raw[4 + keypoints] = g[0];
            raw[5 + keypoints] = g[1];
            Some(GradCase {
                analytic: nz.gradient(&raw),
                x,
                f: Box::new(move |v| {
                    let l = nz.decode(v);
                    endpoint_z_loss((l.z_min(), l.z_max()), gt).0
                }),
            })
        }
        "L_per" | "L_v" => {
            let per = term == "L_per";
            let cfg = loss.perspective;
            let out = perspective_losses(&pair.pred, &pair.k, &pair.gt_resampled, &cfg).ok()?;
            if !out.overlaps() {
                return None;
            }
            let g = if per { out.grad_per } else { out.grad_v };
            let (k, gt) = (pair.k, pair.gt_resampled.clone());
            Some(GradCase {
                analytic: nz.gradient(&g.to_vec()),
                x,
                f: Box::new(move |v| {
                    let o = perspective_losses(&nz.decode(v), &k, &gt, &cfg).unwrap();
                    if per {
                        o.l_per
                    } else {
                        o.l_v
                    }
                }),
            })
        }
        "sigma_h" => {
            let (_, g) = height_variance_reg(&pair.pred.profile.heights);
            let mut raw = vec![0.0; x.len()];
            raw[4..4 + keypoints].copy_from_slice(&g);
            Some(GradCase {
                analytic: nz.gradient(&raw),
                x,
                f: Box::new(move |v| height_variance_reg(&nz.decode(v).profile.heights).0),
            })
        }
        "L_cls" => {
            let n = r.random_range(1..6);
            let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.99)).collect();
            let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            let (_, g) = classification_loss(&scores, &labels).ok()?;
            Some(GradCase {
                x: scores,
                analytic: g,
                f: Box::new(move |v| classification_loss(v, &labels).unwrap().0),
            })
        }
        "L_total" => {
            let with_3d = r.random_bool(0.5);
            let (k, image) = (pair.k, pair.image);
            let gt2d = vec![pair.gt2d.clone()];
            let gt3d = [pair.gt3d.clone()];
            let eval = move |lane: &DecoupledLane3D| {
                total_loss(
                    std::slice::from_ref(lane),
                    &gt2d,
                    with_3d.then_some(&gt3d[..]),
                    &k,
                    image,
                    &loss,
                )
            };
            let b = eval(&pair.pred).ok()?;
            if b.matches.pairs.is_empty() || !b.total.is_finite() {
                return None;
            }
            Some(GradCase {
                analytic: nz.gradient(&b.gradients[0].to_vec()),
                x,
                f: Box::new(move |v| eval(&nz.decode(v)).unwrap().total),
            })
        }
        _ => panic!("unknown term {term}"),
    }
}

/// Accepted configurations, kinked draws skipped, and the worst relative
/// error, for `wanted` kink-free configurations of `term`.
pub struct GradSummary {
    pub passed: usize,
    pub failed: usize,
    pub kinks: usize,
    pub worst: f64,
}

pub fn run_gradient_checks(term: &str, wanted: usize, seed: u64, h: f64, tol: f64) -> GradSummary {
    let mut r = rng(seed);
    let mut s = GradSummary {
        passed: 0,
        failed: 0,
        kinks: 0,
        worst: 0.0,
    };
    let mut draws = 0;
    while s.passed + s.failed < wanted && draws < 20 * wanted {
        draws += 1;
        let Some(case) = gradient_case(term, &mut r) else {
            continue;
        };
        match check_gradient(&case, h, tol) {
            GradCheck::Pass(e) => {
                s.passed += 1;
                s.worst = s.worst.max(e);
            }
            GradCheck::Fail(e) => {
                s.failed += 1;
                s.worst = s.worst.max(e);
            }
            GradCheck::Kink => s.kinks += 1,
        }
    }
    s
}
