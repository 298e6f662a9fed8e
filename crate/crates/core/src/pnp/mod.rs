//! Camera pose from 2D–3D correspondences: EPnP with a closed-form
//! absolute-orientation step, reprojection-error Levenberg–Marquardt
//! refinement, and a seeded RANSAC wrapper composing the two.
//!
//! Poses going in and out of every solver are camera-to-world, like
//! everywhere else in the crate; projection applies the inverse.

mod ba;
mod control;
mod epnp;
mod ransac;
mod residuals;
mod umeyama;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub use ba::{refine_ba, refine_ba_traced, BaConfig};
pub use control::{compute_control_points, ControlPointSet};
pub use epnp::epnp;
pub use ransac::{solve_pnp, PnpConfig, RansacConfig};
pub use residuals::{perturb_pose, reprojection_residuals};
pub use umeyama::umeyama_align;

/// Fewest correspondences EPnP (and therefore RANSAC sampling) accepts.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("insufficient matches: need at least {needed}, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("world points are coplanar")]
    Coplanar,
    #[error("no solution places the points in front of the camera")]
    NoPositiveDepth,
    #[error("correspondence {index} is at or behind the camera plane")]
    CheiralityViolation { index: usize },
    #[error("normal equations stayed singular under damping")]
    SingularSystem,
    #[error("no consensus: best hypothesis has {best} inliers, need {required}")]
    NoConsensus { best: usize, required: usize },
}

/// A query pixel paired with the world point it observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub pixel: Vector2<f64>,
    pub world_point: Vector3<f64>,
}

impl Correspondence2D3D {
    pub fn new(pixel: Vector2<f64>, world_point: Vector3<f64>) -> Self {
        Self { pixel, world_point }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Camera-to-world.
    pub pose: crate::scene::Pose,
    pub inlier_count: usize,
    /// Mean pixel reprojection error over the inliers.
    pub mean_reprojection_error: f64,
    pub iterations: usize,
    pub converged: bool,
}
