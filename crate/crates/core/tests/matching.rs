mod common;

use bevlane::geometry::Point3D;
use bevlane::hungarian_assign;
use bevlane::metrics::chamfer_distance;
use common::{brute_min_assignment, chamfer_oracle, rng};
use proptest::prelude::*;
use rand::Rng;

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6, 1usize..=6)
        .prop_flat_map(|(p, g)| prop::collection::vec(prop::collection::vec(0.0..100.0f64, g), p))
}

proptest! {
    #[test]
    fn hungarian_total_matches_exhaustive_search(costs in matrix()) {
        let m = hungarian_assign(&costs, f64::INFINITY).unwrap();
        let total: f64 = m.pairs.iter().map(|&(_, _, c)| c).sum();
        let best = brute_min_assignment(&costs);
        prop_assert!((total - best).abs() <= 1e-9 * best.max(1.0), "{total} vs {best}");
        prop_assert_eq!(m.pairs.len(), costs.len().min(costs[0].len()));
    }

    #[test]
    fn thresholded_assignment_minimises_clipped_costs(costs in matrix(), t in 1.0..100.0f64) {
        let m = hungarian_assign(&costs, t).unwrap();
        let clipped: Vec<Vec<f64>> = costs.iter().map(|r| r.iter().map(|&c| c.min(t)).collect()).collect();
        let n = costs.len().min(costs[0].len());
        let kept: f64 = m.pairs.iter().map(|&(_, _, c)| c).sum();
        let total = kept + (n - m.pairs.len()) as f64 * t;
        let best = brute_min_assignment(&clipped);
        prop_assert!((total - best).abs() <= 1e-9 * best.max(1.0), "{total} vs {best}");
        prop_assert!(m.pairs.iter().all(|&(p, g, c)| c < t && c == costs[p][g]));
        prop_assert_eq!(m.pairs.len() + m.unmatched_predictions.len(), costs.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_ground_truths.len(), costs[0].len());
    }

    #[test]
    fn hungarian_total_ignores_row_order(costs in matrix(), rot in 0usize..6) {
        let mut rotated = costs.clone();
        let k = rot % costs.len();
        rotated.rotate_left(k);
        let a: f64 = hungarian_assign(&costs, f64::INFINITY).unwrap().pairs.iter().map(|p| p.2).sum();
        let b: f64 = hungarian_assign(&rotated, f64::INFINITY).unwrap().pairs.iter().map(|p| p.2).sum();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}

#[test]
fn infinite_entries_are_avoided_when_possible() {
    let inf = f64::INFINITY;
    let costs = vec![vec![1.0, inf], vec![inf, 2.0]];
    let m = hungarian_assign(&costs, inf).unwrap();
    assert_eq!(m.pairs, vec![(0, 0, 1.0), (1, 1, 2.0)]);
}

fn random_polyline(r: &mut impl Rng) -> Vec<Point3D> {
    let n = r.random_range(2..40);
    let mut z = r.random_range(1.0..10.0);
    (0..n)
        .map(|_| {
            z += r.random_range(0.1..3.0);
            Point3D::new(r.random_range(-5.0..5.0), r.random_range(0.0..3.0), z)
        })
        .collect()
}

#[test]
fn chamfer_matches_exhaustive_point_to_segment_search() {
    let mut r = rng(3);
    for _ in 0..200 {
        let (a, b) = (random_polyline(&mut r), random_polyline(&mut r));
        let got = chamfer_distance(&a, &b).unwrap();
        let want = chamfer_oracle(&a, &b);
        assert!(
            (got - want).abs() <= 1e-12 * want.max(1.0),
            "{got} vs {want}"
        );
        assert_eq!(got, chamfer_distance(&b, &a).unwrap());
    }
}

#[test]
fn chamfer_of_a_polyline_with_itself_is_zero() {
    let a = random_polyline(&mut rng(9));
    assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
}
