mod common;

use bevlane::anchors::{cluster_anchors, LaneDescriptor};
use bevlane::{Execution, ImageSpec};
use common::rng;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn descriptor(v: Vec<f64>) -> LaneDescriptor {
    LaneDescriptor::from_vec(&v)
}

fn blobs(r: &mut ChaCha8Rng, centres: &[[f64; 6]], per: usize, spread: f64) -> Vec<LaneDescriptor> {
    let mut out = Vec::new();
    for c in centres {
        for _ in 0..per {
            out.push(descriptor(
                c.iter()
                    .map(|x| x + r.random_range(-spread..spread))
                    .collect(),
            ));
        }
    }
    out
}

fn inertia(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    data.iter()
        .map(|p| {
            centroids
                .iter()
                .map(|c| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Plain Lloyd iterations from `k` distinct random points, best of `restarts`.
fn lloyd_oracle(data: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut c: Vec<Vec<f64>> = sample(&mut r, data.len(), k)
            .into_iter()
            .map(|i| data[i].clone())
            .collect();
        for _ in 0..100 {
            let mut sums = vec![vec![0.0; data[0].len()]; k];
            let mut counts = vec![0usize; k];
            for p in data {
                let j = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = p.iter().zip(&c[a]).map(|(x, y)| (x - y) * (x - y)).sum();
                        let db: f64 = p.iter().zip(&c[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                counts[j] += 1;
                sums[j].iter_mut().zip(p).for_each(|(s, x)| *s += x);
            }
            for j in 0..k {
                if counts[j] > 0 {
                    c[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                }
            }
        }
        best = best.min(inertia(data, &c));
    }
    best
}

#[test]
fn inertia_is_within_one_percent_of_a_many_restart_oracle() {
    let mut r = rng(17);
    let centres = [
        [100.0, 120.0, 140.0, 160.0, 319.0, 170.0],
        [400.0, 400.0, 400.0, 400.0, 319.0, 165.0],
        [700.0, 650.0, 600.0, 550.0, 300.0, 170.0],
    ];
    for trial in 0..5 {
        let mut data = blobs(&mut r, &centres, 6, 80.0);
        data.push(descriptor(
            (0..6).map(|_| r.random_range(0.0..800.0)).collect(),
        ));
        data.push(descriptor(
            (0..6).map(|_| r.random_range(0.0..800.0)).collect(),
        ));
        assert_eq!(data.len(), 20);
        let set = cluster_anchors(
            &data,
            ImageSpec::default(),
            3,
            trial,
            10,
            Execution::Sequential,
        )
        .unwrap();
        let vecs: Vec<Vec<f64>> = data.iter().map(LaneDescriptor::to_vec).collect();
        let oracle = lloyd_oracle(&vecs, 3, 2000, trial);
        assert!(
            set.inertia <= 1.01 * oracle,
            "trial {trial}: {} vs oracle {oracle}",
            set.inertia
        );
        let anchors: Vec<Vec<f64>> = set.anchors.iter().map(LaneDescriptor::to_vec).collect();
        assert!((inertia(&vecs, &anchors) - set.inertia).abs() <= 1e-9 * set.inertia);
    }
}

fn sorted_centroids(set: &bevlane::anchors::AnchorSet) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = set.anchors.iter().map(LaneDescriptor::to_vec).collect();
    c.sort_by(|a, b| a[0].total_cmp(&b[0]));
    c
}

#[test]
fn duplicating_every_descriptor_leaves_the_anchors_unchanged() {
    let mut r = rng(5);
    let centres = [
        [50.0, 80.0, 110.0, 140.0, 319.0, 170.0],
        [400.0, 400.0, 400.0, 400.0, 319.0, 165.0],
        [750.0, 700.0, 650.0, 600.0, 319.0, 170.0],
    ];
    let data = blobs(&mut r, &centres, 8, 10.0);
    let twice: Vec<LaneDescriptor> = data.iter().chain(&data).cloned().collect();
    for seed in 0..4 {
        let a =
            cluster_anchors(&data, ImageSpec::default(), 3, seed, 5, Execution::Parallel).unwrap();
        let b = cluster_anchors(
            &twice,
            ImageSpec::default(),
            3,
            seed,
            5,
            Execution::Parallel,
        )
        .unwrap();
        for (x, y) in sorted_centroids(&a).iter().zip(&sorted_centroids(&b)) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-9, "{p} vs {q}");
            }
        }
        assert!((b.inertia - 2.0 * a.inertia).abs() <= 1e-9 * b.inertia);
    }
}

#[test]
fn clustering_is_execution_independent() {
    let data = blobs(&mut rng(8), &[[200.0; 6], [600.0; 6]], 15, 120.0);
    let a = cluster_anchors(&data, ImageSpec::default(), 4, 1, 8, Execution::Parallel).unwrap();
    let b = cluster_anchors(&data, ImageSpec::default(), 4, 1, 8, Execution::Sequential).unwrap();
    assert_eq!(a, b);
}
