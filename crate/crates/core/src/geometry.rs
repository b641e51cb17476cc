//! Decoupled lane representation: a cubic curve in the bird's-eye-view
//! (X-Z) plane plus independently stored ground heights at keypoints spaced
//! uniformly along Z.
//!
//! Camera frame convention: X to the right, Y down (ground below the camera
//! has positive Y), Z forward. This is a left-handed system with Y as the
//! height axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of height keypoints per lane.
pub const DEFAULT_KEYPOINTS: usize = 72;

/// A point in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3D) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Lateral position as a cubic in depth: `x = a z^3 + b z^2 + c z + d`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BevCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl BevCurve {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let curve = Self { a, b, c, d };
        curve.validate()?;
        Ok(curve)
    }

    /// Constant-offset straight lane `x = d`.
    pub const fn straight(d: f64) -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "curve coefficients must be finite".into(),
            ))
        }
    }

    /// `[a, b, c, d]`, highest power first.
    pub fn coefficients(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn from_coefficients(c: [f64; 4]) -> Self {
        Self {
            a: c[0],
            b: c[1],
            c: c[2],
            d: c[3],
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        ((self.a * z + self.b) * z + self.c) * z + self.d
    }

    /// dX/dZ.
    #[inline]
    pub fn slope(&self, z: f64) -> f64 {
        (3.0 * self.a * z + 2.0 * self.b) * z + self.c
    }

    /// Translate laterally by `offset` meters.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            d: self.d + offset,
            ..*self
        }
    }
}

/// Evaluates the BEV cubic at depth `z`.
pub fn eval_bev_curve(curve: &BevCurve, z: f64) -> f64 {
    curve.eval(z)
}

/// Ground heights at `n` keypoints spaced uniformly over `[z_min, z_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightProfile {
    pub heights: Vec<f64>,
    pub z_min: f64,
    pub z_max: f64,
}

impl HeightProfile {
    pub fn new(heights: Vec<f64>, z_min: f64, z_max: f64) -> Result<Self> {
        let profile = Self {
            heights,
            z_min,
            z_max,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// `n` keypoints at the same height.
    pub fn flat(height: f64, n: usize, z_min: f64, z_max: f64) -> Result<Self> {
        Self::new(vec![height; n], z_min, z_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heights.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "height profile needs at least 2 keypoints, got {}",
                self.heights.len()
            )));
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min < self.z_max) {
            return Err(Error::InvalidParameter(format!(
                "z range [{}, {}] must be finite and increasing",
                self.z_min, self.z_max
            )));
        }
        if !self.heights.iter().all(|h| h.is_finite()) {
            return Err(Error::InvalidParameter("heights must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Depth of keypoint `i`.
    pub fn keypoint_z(&self, i: usize) -> f64 {
        let last = self.heights.len() - 1;
        if i == last {
            self.z_max
        } else {
            self.z_min + i as f64 * (self.z_max - self.z_min) / last as f64
        }
    }

    /// Interpolated height at fractional position `f` along the profile
    /// (0 at `z_min`, 1 at `z_max`), clamped to the end keypoints.
    pub fn eval_fraction(&self, f: f64) -> f64 {
        let (lo, t) = self.bracket(f);
        if t == 0.0 {
            self.heights[lo]
        } else {
            self.heights[lo] + t * (self.heights[lo + 1] - self.heights[lo])
        }
    }

    /// Keypoint index and interpolation weight of fractional position `f`.
    /// The returned index is always a valid left bracket: `lo + 1 < n` or
    /// `t == 0`.
    pub(crate) fn bracket(&self, f: f64) -> (usize, f64) {
        let last = self.heights.len() - 1;
        if f.is_nan() || f <= 0.0 {
            return (0, 0.0);
        }
        if f >= 1.0 {
            return (last, 0.0);
        }
        let pos = f * last as f64;
        let lo = (pos.floor() as usize).min(last - 1);
        (lo, pos - lo as f64)
    }

    /// Linear interpolation between bracketing keypoints, clamped outside
    /// `[z_min, z_max]`.
    pub fn eval(&self, z: f64) -> f64 {
        self.eval_fraction((z - self.z_min) / (self.z_max - self.z_min))
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_height(&self) -> f64 {
        self.heights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Interpolated ground height at depth `z`.
pub fn eval_height(profile: &HeightProfile, z: f64) -> f64 {
    profile.eval(z)
}

/// A complete lane: BEV curve, height profile and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledLane3D {
    pub curve: BevCurve,
    pub profile: HeightProfile,
    pub score: f64,
}

impl DecoupledLane3D {
    pub fn new(curve: BevCurve, profile: HeightProfile, score: f64) -> Result<Self> {
        let lane = Self {
            curve,
            profile,
            score,
        };
        lane.validate()?;
        Ok(lane)
    }

    pub fn validate(&self) -> Result<()> {
        self.curve.validate()?;
        self.profile.validate()?;
        if self.profile.z_min <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lane must start in front of the camera (z_min = {})",
                self.profile.z_min
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidParameter(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn z_min(&self) -> f64 {
        self.profile.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.profile.z_max
    }

    /// Depth of sample `i` out of `count` uniformly spaced samples; the first
    /// and last are exactly `z_min` and `z_max`.
    pub fn sample_z(&self, i: usize, count: usize) -> f64 {
        sample_depth(self.profile.z_min, self.profile.z_max, i, count)
    }

    pub fn point_at(&self, z: f64) -> Point3D {
        Point3D::new(self.curve.eval(z), self.profile.eval(z), z)
    }

    /// `count` points uniformly spaced in Z, near to far.
    pub fn sample(&self, count: usize) -> Vec<Point3D> {
        (0..count)
            .map(|i| {
                let z = self.sample_z(i, count);
                let f = sample_fraction(i, count);
                Point3D::new(self.curve.eval(z), self.profile.eval_fraction(f), z)
            })
            .collect()
    }
}

impl DecoupledLane3D {
    /// Number of scalars in the flat parameter vector.
    pub fn param_count(&self) -> usize {
        self.profile.heights.len() + 7
    }

    /// Flat parameters `(a, b, c, d, heights.., z_min, z_max, score)`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.curve.coefficients());
        v.extend_from_slice(&self.profile.heights);
        v.extend_from_slice(&[self.profile.z_min, self.profile.z_max, self.score]);
        v
    }

    /// Inverse of [`to_params`](Self::to_params); the keypoint count is
    /// taken from `params.len()`. No validation is applied.
    pub fn from_params(params: &[f64]) -> Self {
        assert!(params.len() >= 9, "parameter vector too short");
        let n = params.len() - 7;
        Self {
            curve: BevCurve::from_coefficients([params[0], params[1], params[2], params[3]]),
            profile: HeightProfile {
                heights: params[4..4 + n].to_vec(),
                z_min: params[4 + n],
                z_max: params[5 + n],
            },
            score: params[6 + n],
        }
    }
}

/// Heights at `n` keypoints uniform over `[z_min, z_max]`, linearly
/// interpolated from a polyline ordered by non-decreasing `z` and clamped at
/// its ends.
pub fn interpolate_heights(
    points: &[Point3D],
    n: usize,
    z_min: f64,
    z_max: f64,
) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 points to interpolate heights, got {}",
            points.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 keypoints, got {n}"
        )));
    }
    if points.windows(2).any(|w| !(w[1].z >= w[0].z)) {
        return Err(Error::DegenerateInput("points must be ordered by z".into()));
    }
    let mut seg = 0usize;
    let heights = (0..n)
        .map(|i| {
            let z = sample_depth(z_min, z_max, i, n);
            if z <= points[0].z {
                return points[0].y;
            }
            if z >= points[points.len() - 1].z {
                return points[points.len() - 1].y;
            }
            while points[seg + 1].z < z {
                seg += 1;
            }
            let (p, q) = (points[seg], points[seg + 1]);
            let dz = q.z - p.z;
            if dz == 0.0 {
                q.y
            } else {
                p.y + (z - p.z) / dz * (q.y - p.y)
            }
        })
        .collect();
    Ok(heights)
}

pub(crate) fn sample_fraction(i: usize, count: usize) -> f64 {
    if i + 1 >= count {
        1.0
    } else {
        i as f64 / (count - 1) as f64
    }
}

pub(crate) fn sample_depth(z_min: f64, z_max: f64, i: usize, count: usize) -> f64 {
    if i + 1 >= count {
        z_max
    } else {
        z_min + i as f64 * (z_max - z_min) / (count - 1) as f64
    }
}

/// Samples `count >= 2` points of `lane` uniformly in Z.
pub fn sample_lane_3d(lane: &DecoupledLane3D, count: usize) -> Result<Vec<Point3D>> {
    if count < 2 {
        return Err(Error::InvalidParameter(format!(
            "sample count must be at least 2, got {count}"
        )));
    }
    Ok(lane.sample(count))
}
