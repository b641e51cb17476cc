//! Pinhole projection between the camera frame and image pixels.
//!
//! The camera sits at the origin with no extrinsics: `u = fx x / z + ox`,
//! `v = fy y / z + oy`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DecoupledLane3D, Point3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
}

impl Default for CameraIntrinsics {
    /// 1000 px focal length with the principal point at the centre of the
    /// default 800x320 image.
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            ox: 400.0,
            oy: 160.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, ox: f64, oy: f64) -> Result<Self> {
        let k = Self { fx, fy, ox, oy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParameter(
                "focal lengths must be positive and finite".into(),
            ));
        }
        if !(self.ox.is_finite() && self.oy.is_finite()) {
            return Err(Error::InvalidParameter(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn project(&self, p: &Point3D) -> Result<(f64, f64)> {
        if !(p.z > 0.0) {
            return Err(Error::Domain(format!(
                "cannot project point at z = {} (at or behind the camera)",
                p.z
            )));
        }
        Ok((self.fx * p.x / p.z + self.ox, self.fy * p.y / p.z + self.oy))
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            width: 800,
            height: 320,
        }
    }
}

impl ImageSpec {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// A perspective-view lane: pixel points ordered near to far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane2D {
    pub points: Vec<(f64, f64)>,
}

impl Lane2D {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let lane = Self { points };
        lane.validate()?;
        Ok(lane)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::DegenerateLane(format!(
                "lane needs at least 2 points, got {}",
                self.points.len()
            )));
        }
        if !self
            .points
            .iter()
            .all(|(u, v)| u.is_finite() && v.is_finite())
        {
            return Err(Error::DegenerateLane("lane points must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(min v, max v)` over all points.
    pub fn v_extent(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
                (lo.min(v), hi.max(v))
            })
    }
}

pub fn project_point(k: &CameraIntrinsics, p: &Point3D) -> Result<(f64, f64)> {
    k.project(p)
}

/// Projects `count` uniformly spaced samples of `lane`. Off-image points are
/// kept.
pub fn project_lane(k: &CameraIntrinsics, lane: &DecoupledLane3D, count: usize) -> Result<Lane2D> {
    if count < 2 {
        return Err(Error::InvalidParameter(format!(
            "projection needs at least 2 samples, got {count}"
        )));
    }
    let points = lane
        .sample(count)
        .iter()
        .map(|p| k.project(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Lane2D { points })
}

/// Projects an explicit point list (e.g. a ground-truth 3D polyline).
pub fn project_points(k: &CameraIntrinsics, points: &[Point3D]) -> Result<Lane2D> {
    let points = points
        .iter()
        .map(|p| k.project(p))
        .collect::<Result<Vec<_>>>()?;
    Lane2D::new(points)
}

/// The point at height `y` (meters below the camera) that projects to
/// pixel `(u, v)`.
pub fn invert_to_ground(k: &CameraIntrinsics, u: f64, v: f64, y: f64) -> Result<Point3D> {
    if !(v > k.oy) {
        return Err(Error::Domain(format!(
            "row {v} is at or above the horizon row {}; the ray never meets the ground",
            k.oy
        )));
    }
    if !(y > 0.0) {
        return Err(Error::Domain(format!(
            "ground height must be positive, got {y}"
        )));
    }
    let z = k.fy * y / (v - k.oy);
    Ok(Point3D::new((u - k.ox) * z / k.fx, y, z))
}
