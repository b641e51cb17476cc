//! Row-grid resampling of perspective lanes, the pairwise matching cost and
//! optimal one-to-one assignment.

use serde::{Deserialize, Serialize};

use crate::camera::{ImageSpec, Lane2D};
use crate::error::{Error, Result};

/// Default spacing of the row grid, pixels.
pub const DEFAULT_ROW_STEP: f64 = 1.0;
/// Default maximum matching cost for a prediction/ground-truth pair, pixels.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 30.0;

/// Image rows `0, step, 2 step, ...` up to the last pixel row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowGrid {
    pub step: f64,
    pub count: usize,
}

impl RowGrid {
    pub fn new(image: ImageSpec, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "row step must be positive, got {step}"
            )));
        }
        let last = (image.height - 1) as f64;
        let count = (last / step).floor() as usize + 1;
        Ok(Self { step, count })
    }

    #[inline]
    pub fn row(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    pub fn last_row(&self) -> f64 {
        self.row(self.count - 1)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(0.0, self.last_row())
    }

    /// Grid indices whose row lies in `[lo, hi]`.
    fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        if hi < 0.0 || lo > self.last_row() {
            return 0..0;
        }
        let first = (lo.max(0.0) / self.step).ceil() as usize;
        let last = ((hi / self.step).floor() as usize).min(self.count - 1);
        if first > last {
            0..0
        } else {
            first..last + 1
        }
    }
}

/// Where the polyline first crosses a grid row: segment index and the
/// interpolation weight along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Crossing {
    pub segment: usize,
    pub t: f64,
}

/// For every grid row, the first crossing when walking the polyline from its
/// near end to its far end. A polyline that folds back over a row (bumpy
/// ground) is represented by its nearest crossing.
pub(crate) fn first_crossings(points: &[(f64, f64)], grid: &RowGrid) -> Vec<Option<Crossing>> {
    let mut out = vec![None; grid.count];
    for (segment, w) in points.windows(2).enumerate() {
        let (v0, v1) = (w[0].1, w[1].1);
        for j in grid.index_range(v0.min(v1), v0.max(v1)) {
            if out[j].is_some() {
                continue;
            }
            let dv = v1 - v0;
            let t = if dv == 0.0 {
                0.0
            } else {
                (grid.row(j) - v0) / dv
            };
            out[j] = Some(Crossing { segment, t });
        }
    }
    out
}

/// `u` at each requested row from the first crossing of the polyline, near
/// to far. Rows the polyline never reaches are `None`.
pub fn u_at_rows(lane: &Lane2D, rows: &[f64]) -> Vec<Option<f64>> {
    rows.iter()
        .map(|&r| {
            lane.points.windows(2).find_map(|w| {
                let (a, b) = (w[0], w[1]);
                let (lo, hi) = if a.1 <= b.1 { (a.1, b.1) } else { (b.1, a.1) };
                if r < lo || r > hi {
                    return None;
                }
                let dv = b.1 - a.1;
                let t = if dv == 0.0 { 0.0 } else { (r - a.1) / dv };
                Some(a.0 + t * (b.0 - a.0))
            })
        })
        .collect()
}

/// A lane sampled on a row grid.
///
/// `v_start` and `v_end` are the largest and smallest `v` reached by the
/// polyline, clamped to the grid's row range. `u` is present exactly on the
/// grid rows inside `[v_end, v_start]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledLane2D {
    pub grid: RowGrid,
    pub u: Vec<Option<f64>>,
    pub v_start: f64,
    pub v_end: f64,
}

impl ResampledLane2D {
    pub fn present_rows(&self) -> usize {
        self.u.iter().filter(|u| u.is_some()).count()
    }

    /// Interpolated `u` at an arbitrary row inside the lane's present rows.
    pub fn u_at(&self, v: f64) -> Option<f64> {
        let pos = v / self.grid.step;
        if pos < 0.0 {
            return None;
        }
        let lo = pos.floor() as usize;
        let t = pos - lo as f64;
        let u0 = (*self.u.get(lo)?)?;
        if t == 0.0 {
            return Some(u0);
        }
        let u1 = (*self.u.get(lo + 1)?)?;
        Some(u0 + t * (u1 - u0))
    }
}

/// Samples `lane` on the grid `0, row_step, ... , height - 1`.
pub fn resample_lane(lane: &Lane2D, image: ImageSpec, row_step: f64) -> Result<ResampledLane2D> {
    lane.validate()?;
    let grid = RowGrid::new(image, row_step)?;
    resample_on_grid(lane, &grid)
}

pub(crate) fn resample_on_grid(lane: &Lane2D, grid: &RowGrid) -> Result<ResampledLane2D> {
    let crossings = first_crossings(&lane.points, grid);
    let u: Vec<Option<f64>> = crossings
        .iter()
        .map(|c| {
            c.map(|c| {
                let (a, b) = (lane.points[c.segment], lane.points[c.segment + 1]);
                a.0 + c.t * (b.0 - a.0)
            })
        })
        .collect();
    if u.iter().all(Option::is_none) {
        let (lo, hi) = lane.v_extent();
        return Err(Error::DegenerateLane(format!(
            "v span [{lo}, {hi}] covers no grid row (step {})",
            grid.step
        )));
    }
    let (lo, hi) = lane.v_extent();
    Ok(ResampledLane2D {
        grid: *grid,
        u,
        v_start: grid.clamp(hi),
        v_end: grid.clamp(lo),
    })
}

/// Mean horizontal distance over shared rows plus the start- and end-row
/// differences. Lanes without a shared row cost `f64::INFINITY`.
pub fn matching_cost(p: &ResampledLane2D, g: &ResampledLane2D) -> Result<f64> {
    if p.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let (sum, n) =
        p.u.iter()
            .zip(&g.u)
            .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sum / n as f64 + (p.v_start - g.v_start).abs() + (p.v_end - g.v_end).abs())
}

/// Outcome of assigning predictions to ground truths.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction, ground truth, cost)`, sorted by prediction index.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

impl MatchResult {
    pub fn all_unmatched(p: usize, g: usize) -> Self {
        Self {
            pairs: Vec::new(),
            unmatched_predictions: (0..p).collect(),
            unmatched_ground_truths: (0..g).collect(),
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }

    /// Ground truth matched to prediction `p`, if any.
    pub fn gt_for(&self, p: usize) -> Option<usize> {
        self.pairs.iter().find(|m| m.0 == p).map(|m| m.1)
    }
}

/// Minimum-cost assignment of a `nr x nc` row-major matrix with `nr <= nc`
/// and finite entries. Returns the column assigned to each row.
///
/// Shortest augmenting paths with row/column potentials, O(nr^2 nc).
fn solve_rectangular(cost: &[f64], nr: usize, nc: usize) -> Vec<usize> {
    debug_assert!(nr <= nc);
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0f64; nr + 1];
    let mut v = vec![0.0f64; nc + 1];
    let mut p = vec![0usize; nc + 1];
    let mut way = vec![0usize; nc + 1];
    for i in 1..=nr {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; nc + 1];
        let mut used = vec![false; nc + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=nc {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * nc + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=nc {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; nr];
    for j in 1..=nc {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal one-to-one assignment of predictions (rows) to ground truths
/// (columns).
///
/// Entries are non-negative or `f64::INFINITY`. The solver minimises the sum
/// of `min(cost, match_threshold)` over a maximum-cardinality assignment,
/// which is the same as padding the matrix to a square with the threshold
/// value. Pairs whose cost reaches the threshold are reported as unmatched.
/// Empty matrices yield an all-unmatched result.
pub fn hungarian_assign(costs: &[Vec<f64>], match_threshold: f64) -> Result<MatchResult> {
    let np = costs.len();
    let ng = costs.first().map_or(0, Vec::len);
    if costs.iter().any(|r| r.len() != ng) {
        return Err(Error::DimensionMismatch(
            "cost matrix rows differ in length".into(),
        ));
    }
    if !(match_threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "match threshold must be positive, got {match_threshold}"
        )));
    }
    if np == 0 || ng == 0 {
        return Ok(MatchResult::all_unmatched(np, ng));
    }
    if costs.iter().flatten().any(|c| c.is_nan() || *c < 0.0) {
        return Err(Error::InvalidParameter(
            "costs must be non-negative or +infinity".into(),
        ));
    }

    let transpose = np > ng;
    let (nr, nc) = if transpose { (ng, np) } else { (np, ng) };
    let entry = |r: usize, c: usize| if transpose { costs[c][r] } else { costs[r][c] };

    let surrogate = if match_threshold.is_finite() {
        match_threshold
    } else {
        // Larger than any assignment built from finite entries only.
        let max_finite = costs
            .iter()
            .flatten()
            .copied()
            .filter(|c| c.is_finite())
            .fold(0.0f64, f64::max);
        (max_finite + 1.0) * (nr as f64 + 1.0)
    };
    let mut flat = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        for c in 0..nc {
            flat.push(entry(r, c).min(surrogate));
        }
    }
    let row_to_col = solve_rectangular(&flat, nr, nc);

    let mut pairs = Vec::new();
    let mut pred_used = vec![false; np];
    let mut gt_used = vec![false; ng];
    for (r, &c) in row_to_col.iter().enumerate() {
        let (pi, gi) = if transpose { (c, r) } else { (r, c) };
        let cost = costs[pi][gi];
        if cost < match_threshold {
            pairs.push((pi, gi, cost));
            pred_used[pi] = true;
            gt_used[gi] = true;
        }
    }
    pairs.sort_by_key(|p| p.0);
    Ok(MatchResult {
        pairs,
        unmatched_predictions: (0..np).filter(|&i| !pred_used[i]).collect(),
        unmatched_ground_truths: (0..ng).filter(|&i| !gt_used[i]).collect(),
    })
}

/// Matching-cost matrix between resampled predictions and ground truths.
pub fn cost_matrix(preds: &[ResampledLane2D], gts: &[ResampledLane2D]) -> Result<Vec<Vec<f64>>> {
    preds
        .iter()
        .map(|p| gts.iter().map(|g| matching_cost(p, g)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: u32) -> ImageSpec {
        ImageSpec::new(800, h).unwrap()
    }

    fn lane(points: &[(f64, f64)]) -> Lane2D {
        Lane2D::new(points.to_vec()).unwrap()
    }

    fn present(r: &ResampledLane2D) -> Vec<(f64, f64)> {
        r.u.iter()
            .enumerate()
            .filter_map(|(j, u)| u.map(|u| (r.grid.row(j), u)))
            .collect()
    }

    #[test]
    fn resample_examples() {
        let r = resample_lane(&lane(&[(100., 300.), (100., 100.)]), img(320), 100.0).unwrap();
        assert_eq!(present(&r), vec![(100., 100.), (200., 100.), (300., 100.)]);
        assert_eq!((r.v_start, r.v_end), (300.0, 100.0));

        let r = resample_lane(&lane(&[(0., 0.), (100., 100.)]), img(320), 50.0).unwrap();
        assert_eq!(present(&r), vec![(0., 0.), (50., 50.), (100., 100.)]);

        let e = resample_lane(&lane(&[(5., 14.), (5., 10.)]), img(320), 50.0);
        assert!(matches!(e, Err(Error::DegenerateLane(_))));
    }

    #[test]
    fn folded_lane_keeps_nearest_crossing() {
        // Goes up to v=100, comes back down to v=150, then up to v=50.
        let l = lane(&[(0., 200.), (10., 100.), (20., 150.), (30., 50.)]);
        let r = resample_lane(&l, img(320), 25.0).unwrap();
        let rows: Vec<(f64, f64)> = present(&r);
        assert_eq!(rows[rows.len() - 1], (200.0, 0.0));
        // row 125 is first crossed on the first segment at u = 7.5
        assert!(rows.contains(&(125.0, 7.5)));
        assert!(rows.contains(&(75.0, 27.5)));
        assert_eq!((r.v_start, r.v_end), (200.0, 50.0));
    }

    #[test]
    fn extents_clamp_to_image() {
        let r = resample_lane(&lane(&[(0., 900.), (0., 200.)]), img(320), 1.0).unwrap();
        assert_eq!((r.v_start, r.v_end), (319.0, 200.0));
        assert_eq!(r.present_rows(), 120);
    }

    #[test]
    fn cost_examples() {
        let g = resample_lane(&lane(&[(100., 300.), (150., 100.)]), img(320), 1.0).unwrap();
        assert_eq!(matching_cost(&g, &g).unwrap(), 0.0);
        let p = resample_lane(&lane(&[(105., 300.), (155., 100.)]), img(320), 1.0).unwrap();
        assert!((matching_cost(&p, &g).unwrap() - 5.0).abs() < 1e-12);
        let far = resample_lane(&lane(&[(100., 90.), (150., 10.)]), img(320), 1.0).unwrap();
        assert_eq!(matching_cost(&far, &g).unwrap(), f64::INFINITY);
        let other = resample_lane(&lane(&[(100., 300.), (150., 100.)]), img(320), 2.0).unwrap();
        assert_eq!(matching_cost(&other, &g), Err(Error::GridMismatch));
    }

    #[test]
    fn hungarian_examples() {
        let m = hungarian_assign(&[vec![1., 10.], vec![10., 1.]], 50.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let m = hungarian_assign(&[vec![1., 2.], vec![2., 100.]], 50.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1, 2.0), (1, 0, 2.0)]);
        assert_eq!(m.total_cost(), 4.0);
    }

    #[test]
    fn hungarian_drops_costly_pairs() {
        let m = hungarian_assign(&[vec![1., 80.], vec![90., 100.]], 50.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        assert_eq!(m.unmatched_predictions, vec![1]);
        assert_eq!(m.unmatched_ground_truths, vec![1]);
        let m = hungarian_assign(&[vec![f64::INFINITY, 3.0]], f64::INFINITY).unwrap();
        assert_eq!(m.pairs, vec![(0, 1, 3.0)]);
    }

    #[test]
    fn hungarian_empty_and_invalid() {
        let m = hungarian_assign(&[], 30.0).unwrap();
        assert!(m.pairs.is_empty());
        let m = hungarian_assign(&[vec![], vec![]], 30.0).unwrap();
        assert_eq!(m.unmatched_predictions, vec![0, 1]);
        assert!(hungarian_assign(&[vec![f64::NAN]], 30.0).is_err());
        assert!(hungarian_assign(&[vec![-1.0]], 30.0).is_err());
        assert!(hungarian_assign(&[vec![1.0, 2.0], vec![1.0]], 30.0).is_err());
    }

    fn brute_min(costs: &[Vec<f64>]) -> f64 {
        fn go(costs: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == costs.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(costs[row][c] + go(costs, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(costs, 0, &mut vec![false; costs[0].len()])
    }

    #[test]
    fn three_by_five_matches_all_injections() {
        let costs = vec![
            vec![7., 3., 9., 4., 8.],
            vec![2., 6., 5., 9., 1.],
            vec![4., 4., 2., 7., 3.],
        ];
        let m = hungarian_assign(&costs, f64::INFINITY).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert_eq!(m.total_cost(), brute_min(&costs));
    }

    proptest! {
        #[test]
        fn shift_does_not_change_assignment(
            rows in 1usize..5, cols in 1usize..5,
            vals in prop::collection::vec(0u32..50, 25), shift in 1u32..100,
        ) {
            let costs: Vec<Vec<f64>> = (0..rows)
                .map(|r| (0..cols).map(|c| vals[r * 5 + c] as f64).collect())
                .collect();
            let shifted: Vec<Vec<f64>> = costs
                .iter()
                .map(|r| r.iter().map(|c| c + shift as f64).collect())
                .collect();
            let a = hungarian_assign(&costs, f64::INFINITY).unwrap();
            let b = hungarian_assign(&shifted, f64::INFINITY).unwrap();
            let ta: f64 = a.pairs.iter().map(|p| costs[p.0][p.1]).sum();
            let tb: f64 = b.pairs.iter().map(|p| costs[p.0][p.1]).sum();
            prop_assert_eq!(ta, tb);
        }

        #[test]
        fn matching_cost_symmetric(du in -50.0..50.0f64, top in 100.0..200.0f64) {
            let a = resample_lane(&lane(&[(300., 319.), (350., top)]), img(320), 1.0).unwrap();
            let b = resample_lane(&lane(&[(300. + du, 319.), (350. + du, 150.)]), img(320), 1.0).unwrap();
            prop_assert_eq!(matching_cost(&a, &b).unwrap(), matching_cost(&b, &a).unwrap());
        }
    }
}
