//! Projection geometry, per-pixel coordinate encodings, spatial transforms,
//! rigid pose recovery and ADD/ADD-S evaluation for RGB-D object pose
//! estimation, plus a synthetic scene generator and a harness that measures
//! how transforms break the pinhole projection equation.

pub mod error;
pub mod geo_image;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod scene;
pub mod solver;
pub mod transforms;

pub use error::{Error, Result};
pub use geo_image::{encode_normals, encode_pe, encode_plain_uv, encode_xy, Channel, GeoImage, PeConfig};
pub use geometry::{
    backproject, pose_inverse, project, transform_point, CamPoint, CameraIntrinsics, ModelPoint, PixelSample, Pose,
    Rotation,
};
pub use harness::{projection_residual, run_breakdown_experiment, CoordMode, ResidualReport};
pub use metrics::{add_distance, adds_distance, auc, ModelPoints};
pub use solver::{robust_solve, solve_pose_from_pixels, umeyama, Correspondences, Observations};
pub use transforms::{crop, flip, resize, roi_align, Axis, Roi, TransformSpec, TransformStep};
