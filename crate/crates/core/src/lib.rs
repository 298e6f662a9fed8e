//! Monocular camera relocalization against 3D Gaussian splat maps.
//!
//! The pipeline retrieves the most similar pre-rendered anchor view, matches
//! the query image against it, lifts the matches to 3D through the rendered
//! depth, solves PnP, then repeatedly re-renders at the new estimate and
//! re-solves until the pose stops moving.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod features;
pub mod image;
pub mod pnp;
pub mod reloc;
pub mod render;
pub mod scene;

pub use image::Image;
pub use scene::{CameraIntrinsics, Gaussian3D, Pose, SplatScene, Trajectory};
