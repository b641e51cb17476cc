//! Lane geometry with a decoupled representation: a cubic curve in the
//! bird's-eye view (X as a function of depth Z) plus ground heights stored at
//! keypoints spaced uniformly in Z. Around that representation the crate
//! provides pinhole projection, Hungarian matching, differentiable losses,
//! least-squares and gradient-based fitting, lane benchmark metrics, anchor
//! clustering, synthetic uneven-road scenes, JSON Lines I/O and SVG
//! rendering.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod assignment;
pub mod camera;
pub mod datagen;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod render;

pub use assignment::{
    hungarian_assign, matching_cost, resample_lane, MatchResult, ResampledLane2D, RowGrid,
};
pub use camera::{
    invert_to_ground, project_lane, project_point, CameraIntrinsics, ImageSpec, Lane2D,
};
pub use error::{Error, Result};
pub use geometry::{
    eval_bev_curve, eval_height, sample_lane_3d, BevCurve, DecoupledLane3D, HeightProfile, Point3D,
    DEFAULT_KEYPOINTS,
};
pub use losses::{IoUConfig, LaneGradient, LossBreakdown, LossConfig, LossWeights};
pub use par::Execution;
