//! Synthetic road scenes: parallel lanes offset from one BEV centerline,
//! draped over parametric ground, with exact pinhole projections.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{project_points, CameraIntrinsics, ImageSpec, Lane2D};
use crate::error::{Error, Result};
use crate::geometry::{BevCurve, Point3D};
use crate::par::Execution;

/// Points per generated 3D lane.
pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundKind {
    Flat,
    Slope,
    Sine,
    SmoothNoise,
}

/// Ground surface below the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub kind: GroundKind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default)]
    pub grade: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_wavelength() -> f64 {
    20.0
}

impl Default for GroundModel {
    fn default() -> Self {
        Self::flat()
    }
}

impl GroundModel {
    pub fn flat() -> Self {
        Self {
            kind: GroundKind::Flat,
            amplitude: 0.0,
            wavelength: default_wavelength(),
            grade: 0.0,
            seed: 0,
        }
    }

    pub fn slope(grade: f64) -> Self {
        Self {
            kind: GroundKind::Slope,
            grade,
            ..Self::flat()
        }
    }

    pub fn sine(amplitude: f64, wavelength: f64) -> Self {
        Self {
            kind: GroundKind::Sine,
            amplitude,
            wavelength,
            ..Self::flat()
        }
    }

    pub fn smooth_noise(amplitude: f64, seed: u64) -> Self {
        Self {
            kind: GroundKind::SmoothNoise,
            amplitude,
            seed,
            ..Self::flat()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ground amplitude {} must be >= 0",
                self.amplitude
            )));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ground wavelength {} must be > 0",
                self.wavelength
            )));
        }
        if !self.grade.is_finite() {
            return Err(Error::InvalidParameter(
                "ground grade must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Wavelength (m) and phase of each noise component.
    fn noise_components(&self) -> [(f64, f64); 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        std::array::from_fn(|_| (rng.random_range(10.0..40.0), rng.random_range(0.0..TAU)))
    }

    /// Camera-frame `y` of the ground at depth `z` (positive below the camera).
    pub fn height(&self, camera_height: f64, z: f64) -> f64 {
        match self.kind {
            GroundKind::Flat => camera_height,
            GroundKind::Slope => camera_height - self.grade * z,
            GroundKind::Sine => camera_height + self.amplitude * (TAU * z / self.wavelength).sin(),
            GroundKind::SmoothNoise => {
                let sum: f64 = self
                    .noise_components()
                    .iter()
                    .map(|&(wl, phase)| (TAU * z / wl + phase).sin())
                    .sum();
                camera_height + self.amplitude * sum / 4.0
            }
        }
    }
}

pub fn ground_height(model: &GroundModel, camera_height: f64, z: f64) -> f64 {
    model.height(camera_height, z)
}

/// One family of road scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Lateral offset of each lane from the centerline, meters.
    pub lateral_offsets: Vec<f64>,
    pub centerline: BevCurve,
    pub ground: GroundModel,
    pub z_range: (f64, f64),
    pub camera_height: f64,
    pub intrinsics: CameraIntrinsics,
    pub image: ImageSpec,
    pub samples: usize,
    /// Standard deviation of Gaussian noise added to lateral positions, meters.
    pub label_noise: f64,
    pub tag: String,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            lateral_offsets: vec![-5.25, -1.75, 1.75, 5.25],
            centerline: BevCurve::default(),
            ground: GroundModel::flat(),
            z_range: (3.0, 80.0),
            camera_height: 1.5,
            intrinsics: CameraIntrinsics::default(),
            image: ImageSpec::default(),
            samples: DEFAULT_SAMPLES,
            label_noise: 0.0,
            tag: "flat".into(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Straight road with two lanes at ±1.75 m over a 0.3 m, 20 m sine bump.
    pub fn bump() -> Self {
        Self {
            lateral_offsets: vec![-1.75, 1.75],
            ground: GroundModel::sine(0.3, 20.0),
            tag: "bump".into(),
            ..Self::default()
        }
    }

    /// Named presets: `flat`, `slope`, `sine`, `bump`, `noise`, `curve`.
    pub fn preset(name: &str) -> Option<Self> {
        let curve = BevCurve::new(2e-6, 4e-4, 0.01, 0.0).ok()?;
        Some(match name {
            "flat" => Self::default(),
            "slope" => Self {
                ground: GroundModel::slope(0.01),
                tag: "slope".into(),
                ..Self::default()
            },
            "sine" => Self {
                ground: GroundModel::sine(0.3, 20.0),
                tag: "sine".into(),
                ..Self::default()
            },
            "bump" => Self::bump(),
            "noise" => Self {
                ground: GroundModel::smooth_noise(0.3, 7),
                tag: "noise".into(),
                ..Self::default()
            },
            "curve" => Self {
                centerline: curve,
                ground: GroundModel::sine(0.2, 30.0),
                tag: "curve".into(),
                ..Self::default()
            },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (z0, z1) = self.z_range;
        if !(z0 > 0.0 && z1 > z0 && z1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "z range ({z0}, {z1}) must satisfy 0 < z_min < z_max"
            )));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter(
                "a lane needs at least 2 samples".into(),
            ));
        }
        if self.lateral_offsets.iter().any(|o| !o.is_finite()) || !self.camera_height.is_finite() {
            return Err(Error::InvalidParameter(
                "offsets and camera height must be finite".into(),
            ));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return Err(Error::InvalidParameter("label noise must be >= 0".into()));
        }
        self.intrinsics.validate()?;
        self.ground.validate()
    }

    pub fn lane_count(&self) -> usize {
        self.lateral_offsets.len()
    }
}

/// A generated frame: 3D ground truth and its exact projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub image: ImageSpec,
    pub lanes_3d: Vec<Vec<Point3D>>,
    pub lanes_2d: Vec<Lane2D>,
    pub tag: String,
    pub seed: u64,
}

/// The lanes of one scene; label noise, if any, is drawn from `spec.seed`.
pub fn generate_frame(spec: &SceneSpec) -> Result<FrameRecord> {
    generate_frame_with_id(spec, "0".into())
}

fn generate_frame_with_id(spec: &SceneSpec, id: String) -> Result<FrameRecord> {
    spec.validate()?;
    let (z0, z1) = spec.z_range;
    let n = spec.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0, spec.label_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut lanes_3d = Vec::with_capacity(spec.lane_count());
    let mut lanes_2d = Vec::with_capacity(spec.lane_count());
    for &offset in &spec.lateral_offsets {
        let points: Vec<Point3D> = (0..n)
            .map(|i| {
                let z = if i + 1 == n {
                    z1
                } else {
                    z0 + (z1 - z0) * i as f64 / (n - 1) as f64
                };
                let jitter = if spec.label_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                Point3D::new(
                    spec.centerline.eval(z) + offset + jitter,
                    spec.ground.height(spec.camera_height, z),
                    z,
                )
            })
            .collect();
        lanes_2d.push(project_points(&spec.intrinsics, &points)?);
        lanes_3d.push(points);
    }
    Ok(FrameRecord {
        id,
        intrinsics: spec.intrinsics,
        image: spec.image,
        lanes_3d,
        lanes_2d,
        tag: spec.tag.clone(),
        seed: spec.seed,
    })
}

/// Half-widths of uniform per-frame perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    /// Bounds on the centerline coefficients `(a, b, c, d)`.
    pub centerline: [f64; 4],
    pub amplitude: f64,
    pub wavelength: f64,
    pub grade: f64,
    /// Draw a fresh smooth-noise ground seed per frame.
    pub reseed_ground: bool,
}

impl Jitter {
    /// Moderate road variation used by the command line.
    pub fn moderate() -> Self {
        Self {
            centerline: [1e-6, 2e-4, 0.02, 0.5],
            amplitude: 0.1,
            wavelength: 5.0,
            grade: 0.005,
            reseed_ground: true,
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of frame `index` of a scene family with seed `seed`.
pub fn frame_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Scene of frame `index`: the base spec perturbed within `jitter`.
pub fn jittered_spec(base: &SceneSpec, index: u64, jitter: &Jitter) -> Result<SceneSpec> {
    let seed = frame_seed(base.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = base.clone();
    let c = base.centerline.coefficients();
    let j: Vec<f64> = (0..4)
        .map(|i| c[i] + symmetric(&mut rng, jitter.centerline[i]))
        .collect();
    spec.centerline = BevCurve::new(j[0], j[1], j[2], j[3])?;
    let g = &mut spec.ground;
    g.amplitude = (g.amplitude + symmetric(&mut rng, jitter.amplitude)).max(0.0);
    g.wavelength = (g.wavelength + symmetric(&mut rng, jitter.wavelength)).max(1.0);
    g.grade += symmetric(&mut rng, jitter.grade);
    if jitter.reseed_ground {
        g.seed = rng.random();
    }
    spec.seed = seed;
    Ok(spec)
}

/// `frames_per_spec` frames of every spec, in spec order. Frame ids are
/// `"<spec index>-<frame index>"`.
pub fn generate_dataset(
    specs: &[SceneSpec],
    frames_per_spec: usize,
    jitter: &Jitter,
    exec: Execution,
) -> Result<Vec<FrameRecord>> {
    if frames_per_spec == 0 {
        return Err(Error::InvalidParameter(
            "frames per spec must be at least 1".into(),
        ));
    }
    for s in specs {
        s.validate()?;
    }
    let total = specs.len() * frames_per_spec;
    exec.map_indexed(total, |k| {
        let (s, i) = (k / frames_per_spec, k % frames_per_spec);
        let spec = jittered_spec(&specs[s], i as u64, jitter)?;
        generate_frame_with_id(&spec, format!("{s:03}-{i:05}"))
    })
    .into_iter()
    .collect()
}
