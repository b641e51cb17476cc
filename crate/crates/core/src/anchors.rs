//! Lane anchors from k-means clustering of fixed-length 2D lane descriptors.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{matching_cost, resample_lane, u_at_rows};
use crate::camera::{ImageSpec, Lane2D};
use crate::datagen::splitmix64;
use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_DESCRIPTOR_ROWS: usize = 36;
pub const DEFAULT_K: usize = 24;
pub const MAX_K: usize = 50;
pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_KMEANS_ITERS: usize = 300;

/// `m` uniformly spaced rows from the middle of the image to its last row.
pub fn descriptor_rows(image: ImageSpec, m: usize) -> Vec<f64> {
    let top = (image.height / 2) as f64;
    let bottom = (image.height - 1) as f64;
    (0..m)
        .map(|j| top + (bottom - top) * j as f64 / (m - 1) as f64)
        .collect()
}

/// Lane `u` at fixed rows plus the lane's vertical extent in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneDescriptor {
    pub u: Vec<f64>,
    pub v_start: f64,
    pub v_end: f64,
}

impl LaneDescriptor {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.u.clone();
        v.push(self.v_start);
        v.push(self.v_end);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let m = v.len() - 2;
        Self {
            u: v[..m].to_vec(),
            v_start: v[m],
            v_end: v[m + 1],
        }
    }

    /// `u` at row `v`, linear between descriptor rows and constant beyond them.
    pub fn u_at(&self, rows: &[f64], v: f64) -> f64 {
        if v <= rows[0] {
            return self.u[0];
        }
        let last = rows.len() - 1;
        if v >= rows[last] {
            return self.u[last];
        }
        let j = rows.partition_point(|&r| r <= v).min(last) - 1;
        let t = (v - rows[j]) / (rows[j + 1] - rows[j]);
        self.u[j] + t * (self.u[j + 1] - self.u[j])
    }

    /// The polyline from `v_start` up to `v_end`.
    pub fn to_lane(&self, rows: &[f64]) -> Result<Lane2D> {
        if !(self.v_start - self.v_end >= 1.0) {
            return Err(Error::DegenerateLane(format!(
                "descriptor spans rows {}..{}",
                self.v_end, self.v_start
            )));
        }
        let mut points = vec![(self.u_at(rows, self.v_start), self.v_start)];
        points.extend(
            rows.iter()
                .rev()
                .filter(|&&r| r < self.v_start && r > self.v_end)
                .map(|&r| (self.u_at(rows, r), r)),
        );
        points.push((self.u_at(rows, self.v_end), self.v_end));
        Lane2D::new(points)
    }
}

/// Descriptor of `lane` on `m` rows over the lower half of the image. Rows
/// the lane does not reach take the `u` of the nearest covered row.
pub fn build_descriptor(lane: &Lane2D, image: ImageSpec, m: usize) -> Result<LaneDescriptor> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "descriptor needs at least 2 rows, got {m}"
        )));
    }
    lane.validate()?;
    let last = (image.height - 1) as f64;
    let (v_min, v_max) = lane.v_extent();
    let (v_end, v_start) = (v_min.clamp(0.0, last), v_max.clamp(0.0, last));
    if v_start - v_end < 2.0 {
        return Err(Error::DegenerateLane(format!(
            "lane spans {:.3} rows in the image",
            v_start - v_end
        )));
    }
    let rows = descriptor_rows(image, m);
    let raw = u_at_rows(lane, &rows);
    let covered: Vec<usize> = (0..m).filter(|&j| raw[j].is_some()).collect();
    if covered.is_empty() {
        return Err(Error::DegenerateLane(
            "lane does not reach the descriptor rows".into(),
        ));
    }
    let u = (0..m)
        .map(|j| match raw[j] {
            Some(u) => u,
            None => {
                let nearest = covered
                    .iter()
                    .min_by_key(|&&c| (c as isize - j as isize).unsigned_abs())
                    .unwrap();
                raw[*nearest].unwrap()
            }
        })
        .collect();
    Ok(LaneDescriptor { u, v_start, v_end })
}

/// Clustered anchors together with the k-means diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub image: ImageSpec,
    pub rows: Vec<f64>,
    pub anchors: Vec<LaneDescriptor>,
    pub inertia: f64,
    /// Restart that produced the anchors.
    pub restart: usize,
    /// Inertia after every assignment step, per restart.
    pub inertia_history: Vec<Vec<f64>>,
}

impl AnchorSet {
    pub fn k(&self) -> usize {
        self.anchors.len()
    }

    pub fn lanes(&self) -> Vec<Result<Lane2D>> {
        self.anchors.iter().map(|a| a.to_lane(&self.rows)).collect()
    }
}

/// Result of one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(point, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn kmeans_pp_seed(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..data.len()),
        };
        centroids.push(data[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(data) {
            *d = d.min(dist2(p, c));
        }
    }
    centroids
}

/// Moves the farthest point of a multi-member cluster into every empty
/// cluster; never increases inertia.
fn reseed_empty(data: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..data.len())
            .filter(|&i| sizes[assignment[i]] > 1)
            .map(|i| (i, dist2(&data[i], &centroids[assignment[i]])))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((i, _)) = far else {
            return;
        };
        centroids[empty] = data[i].clone();
        assignment[i] = empty;
    }
}

fn inertia_of(data: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    data.iter()
        .zip(assignment)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum()
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_seed(data, k, &mut rng);
    let dim = data[0].len();
    let mut assignment: Vec<usize> = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_KMEANS_ITERS {
        let mut next: Vec<usize> = data.iter().map(|p| nearest(p, &centroids).0).collect();
        reseed_empty(data, &mut centroids, &mut next, k);
        history.push(inertia_of(data, &centroids, &next));
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    let inertia = inertia_of(data, &centroids, &assignment);
    KMeansRun {
        centroids,
        assignment,
        inertia,
        history,
    }
}

/// k-means over descriptors with `restarts` independent k-means++ runs;
/// keeps the lowest inertia, ties broken by restart index.
pub fn cluster_anchors(
    descriptors: &[LaneDescriptor],
    image: ImageSpec,
    k: usize,
    seed: u64,
    restarts: usize,
    exec: Execution,
) -> Result<AnchorSet> {
    if k == 0 || k > MAX_K {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={MAX_K}, got {k}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidParameter(
            "at least one restart is required".into(),
        ));
    }
    if descriptors.len() < k {
        return Err(Error::TooFewSamples {
            have: descriptors.len(),
            want: k,
        });
    }
    let m = descriptors[0].u.len();
    if let Some(d) = descriptors.iter().find(|d| d.u.len() != m) {
        return Err(Error::LengthMismatch {
            left: m,
            right: d.u.len(),
        });
    }
    let data: Vec<Vec<f64>> = descriptors.iter().map(LaneDescriptor::to_vec).collect();
    let runs = exec.map_indexed(restarts, |r| {
        kmeans(&data, k, splitmix64(seed ^ splitmix64(r as u64)))
    });
    let (best, run) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia.total_cmp(&b.1.inertia).then(a.0.cmp(&b.0)))
        .unwrap();
    Ok(AnchorSet {
        image,
        rows: descriptor_rows(image, m),
        anchors: run
            .centroids
            .iter()
            .map(|c| LaneDescriptor::from_vec(c))
            .collect(),
        inertia: run.inertia,
        restart: best,
        inertia_history: runs.iter().map(|r| r.history.clone()).collect(),
    })
}

/// Fraction of ground-truth lanes whose closest anchor, by the row-wise
/// matching cost, is below `threshold` pixels. Zero without anchors or lanes.
pub fn anchor_recall(anchors: &AnchorSet, gts: &[Lane2D], threshold: f64) -> Result<f64> {
    if gts.is_empty() || anchors.anchors.is_empty() {
        return Ok(0.0);
    }
    let image = anchors.image;
    let resampled: Vec<_> = anchors
        .lanes()
        .into_iter()
        .filter_map(|l| l.ok().and_then(|l| resample_lane(&l, image, 1.0).ok()))
        .collect();
    let mut hit = 0;
    for g in gts {
        let Ok(g) = resample_lane(g, image, 1.0) else {
            continue;
        };
        let best = resampled
            .iter()
            .map(|a| matching_cost(a, &g))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if best < threshold {
            hit += 1;
        }
    }
    Ok(hit as f64 / gts.len() as f64)
}
