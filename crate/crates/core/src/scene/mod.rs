//! Splat map representation, camera model, pose algebra, file formats, and
//! the seeded synthetic-scene generator.

mod camera;
mod io;
mod pose;
pub mod synthetic;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

pub use camera::CameraIntrinsics;
pub use io::{load_kitti_poses, load_splat_file, save_kitti_poses, save_splat_file};
pub use pose::{axis_angle, pose_delta, rotation_angle, Pose};
pub use synthetic::{generate_synthetic_scene, SyntheticConfig};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("record {record}: expected {expected} fields, found {found}")]
    FieldCount {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {record}: could not parse field {field} ({text:?})")]
    Parse { record: usize, field: usize, text: String },
    #[error("record {record}: non-finite value in field {field}")]
    NonFinite { record: usize, field: usize },
    #[error("record {record}: scale must be strictly positive")]
    NonPositiveScale { record: usize },
    #[error("record {record}: {what} out of bounds ({value})")]
    OutOfBounds {
        record: usize,
        what: &'static str,
        value: f64,
    },
    #[error("record {record}: rotation quaternion is not unit length (norm {norm})")]
    NonUnitQuaternion { record: usize, norm: f64 },
    #[error("header declares {declared} records, file has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("sky color out of [0, 1]")]
    InvalidSky,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// One anisotropic Gaussian in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations in meters.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    /// Validating constructor. `record` is only used to label errors.
    pub fn new(
        mean: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self, SceneError> {
        let g = Self {
            mean,
            rotation: pose::canonical(rotation),
            scale,
            opacity,
            color,
        };
        g.validate(0)?;
        Ok(g)
    }

    pub fn validate(&self, record: usize) -> Result<(), SceneError> {
        let norm = self.rotation.quaternion().norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SceneError::NonUnitQuaternion { record, norm });
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(SceneError::NonPositiveScale { record });
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(SceneError::OutOfBounds {
                record,
                what: "opacity",
                value: self.opacity,
            });
        }
        if let Some(c) = self.color.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SceneError::OutOfBounds {
                record,
                what: "color",
                value: *c,
            });
        }
        Ok(())
    }

    /// World-frame covariance `R S² Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatScene {
    pub gaussians: Vec<Gaussian3D>,
    pub sky_color: [f64; 3],
}

impl SplatScene {
    pub fn new(gaussians: Vec<Gaussian3D>, sky_color: [f64; 3]) -> Result<Self, SceneError> {
        for (i, g) in gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        if sky_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SceneError::InvalidSky);
        }
        Ok(Self { gaussians, sky_color })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Poses keyed by a strictly increasing frame index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<(u64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(u64, Pose)>) -> Result<Self, SceneError> {
        if let Some(w) = entries.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(SceneError::InvalidTrajectory(format!(
                "indices must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { entries })
    }

    /// Indexes poses 0, 1, 2, ...
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        Self {
            entries: poses.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect(),
        }
    }

    pub fn entries(&self) -> &[(u64, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u64) -> Option<&Pose> {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .ok()
            .map(|k| &self.entries[k].1)
    }

    /// Sum of camera-center distances between consecutive poses.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }
}
