//! Seeded synthetic splat scenes with a ground-truth camera trajectory.
//!
//! Gaussians are scattered uniformly in the box `[-extent, extent]³`. The
//! camera rides a straight line parallel to the world x axis at
//! `z = -2·extent`, looking down +z (world y points down, as in the camera
//! frame), so every pose faces the cloud from one box-width away.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, Gaussian3D, Pose, SceneError, SplatScene, Trajectory};

/// Minimum number of Gaussian means inside the default camera's frustum for
/// every generated trajectory pose.
pub const MIN_VISIBLE_GAUSSIANS: usize = 50;

const SKY_COLOR: [f64; 3] = [0.55, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_gaussians: usize,
    /// Half-width of the placement box, meters.
    pub extent: f64,
    /// Number of trajectory poses.
    pub trajectory_length: usize,
    /// Intended anchor spacing in meters; consecutive trajectory poses are
    /// `anchor_spacing / 3` apart so every third pose is an anchor.
    pub anchor_spacing: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 5000,
            extent: 5.0,
            trajectory_length: 10,
            anchor_spacing: 3.0,
        }
    }
}

impl SyntheticConfig {
    pub fn trajectory_step(&self) -> f64 {
        self.anchor_spacing / 3.0
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.n_gaussians == 0 {
            return Err(SceneError::InvalidConfig("n_gaussians must be >= 1".into()));
        }
        if !(self.extent > 0.0) {
            return Err(SceneError::InvalidConfig("extent must be positive".into()));
        }
        if self.trajectory_length == 0 {
            return Err(SceneError::InvalidConfig("trajectory_length must be >= 1".into()));
        }
        if !(self.anchor_spacing > 0.0) {
            return Err(SceneError::InvalidConfig("anchor_spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Pure function of `(seed, config)`.
pub fn generate_synthetic_scene(seed: u64, config: &SyntheticConfig) -> Result<(SplatScene, Trajectory), SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = config.extent;

    let gaussians = (0..config.n_gaussians)
        .map(|_| {
            let mean = Vector3::new(
                rng.random_range(-e..=e),
                rng.random_range(-e..=e),
                rng.random_range(-e..=e),
            );
            let rotation = random_rotation(&mut rng);
            let scale = Vector3::new(
                rng.random_range(0.05..=0.5),
                rng.random_range(0.05..=0.5),
                rng.random_range(0.05..=0.5),
            );
            let opacity = rng.random_range(0.5..=1.0);
            let color = [rng.random(), rng.random(), rng.random()];
            Gaussian3D {
                mean,
                rotation: super::pose::canonical(rotation),
                scale,
                opacity,
                color,
            }
        })
        .collect();
    let scene = SplatScene::new(gaussians, SKY_COLOR)?;

    let step = config.trajectory_step();
    let mid = (config.trajectory_length - 1) as f64 / 2.0;
    let traj = Trajectory::from_poses(
        (0..config.trajectory_length)
            .map(|i| Pose::from_translation(Vector3::new((i as f64 - mid) * step, 0.0, -2.0 * e))),
    );

    let cam = CameraIntrinsics::default();
    for (i, pose) in traj.entries() {
        let seen = visible_means(&scene, pose, &cam);
        if seen < MIN_VISIBLE_GAUSSIANS {
            return Err(SceneError::InvalidConfig(format!(
                "trajectory pose {i} sees only {seen} Gaussians; \
                 increase n_gaussians or shorten the trajectory"
            )));
        }
    }
    Ok((scene, traj))
}

fn visible_means(scene: &SplatScene, pose: &Pose, cam: &CameraIntrinsics) -> usize {
    scene
        .gaussians
        .iter()
        .filter(|g| {
            let p = pose.inverse_transform_point(&g.mean);
            p.z > cam.near && cam.contains(&cam.project(&p))
        })
        .count()
}

/// Uniformly distributed rotation (normalized 4D Gaussian sample).
pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Uniformly distributed unit vector.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Moves the camera center by exactly `translation` meters in a random
/// direction and rotates it by exactly `angle` radians about a random axis
/// (applied in the camera frame).
pub fn perturb_pose<R: Rng>(pose: &Pose, translation: f64, angle: f64, rng: &mut R) -> Pose {
    let dir = random_unit_vector(rng);
    let axis = random_unit_vector(rng);
    Pose::new(
        pose.rotation() * super::axis_angle(axis, angle),
        pose.translation() + dir * translation,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::pose_delta;

    #[test]
    fn same_seed_gives_identical_scene() {
        let cfg = SyntheticConfig {
            n_gaussians: 500,
            ..Default::default()
        };
        let a = generate_synthetic_scene(9, &cfg).unwrap();
        let b = generate_synthetic_scene(9, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(10, &cfg).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn means_stay_inside_box() {
        let cfg = SyntheticConfig::default();
        let (scene, _) = generate_synthetic_scene(1, &cfg).unwrap();
        assert_eq!(scene.len(), 5000);
        for g in &scene.gaussians {
            assert!(g.mean.iter().all(|c| c.abs() <= cfg.extent));
        }
    }

    #[test]
    fn every_pose_sees_enough_gaussians_brute_force() {
        let cam = CameraIntrinsics::default();
        let (scene, traj) = generate_synthetic_scene(1, &SyntheticConfig::default()).unwrap();
        for pose in traj.poses() {
            let r = pose.rotation_matrix();
            let c = pose.translation();
            let mut count = 0;
            for g in &scene.gaussians {
                // world -> camera by hand: Rᵀ (x - c)
                let p = r.transpose() * (g.mean - c);
                if p.z <= cam.near {
                    continue;
                }
                let u = cam.fx * p.x / p.z + cam.cx;
                let v = cam.fy * p.y / p.z + cam.cy;
                if u >= 0.0 && v >= 0.0 && u <= 319.0 && v <= 239.0 {
                    count += 1;
                }
            }
            assert!(count >= MIN_VISIBLE_GAUSSIANS, "only {count} visible");
        }
    }

    #[test]
    fn non_positive_config_is_rejected() {
        let bad = [
            SyntheticConfig {
                n_gaussians: 0,
                ..Default::default()
            },
            SyntheticConfig {
                extent: 0.0,
                ..Default::default()
            },
            SyntheticConfig {
                anchor_spacing: -1.0,
                ..Default::default()
            },
            SyntheticConfig {
                trajectory_length: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                generate_synthetic_scene(0, &cfg),
                Err(SceneError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn trajectory_steps_are_a_third_of_spacing() {
        let (_, traj) = generate_synthetic_scene(2, &SyntheticConfig::default()).unwrap();
        assert_eq!(traj.len(), 10);
        for w in traj.entries().windows(2) {
            let (dt, dr) = pose_delta(&w[0].1, &w[1].1);
            assert!((dt - 1.0).abs() < 1e-12);
            assert_eq!(dr, 0.0);
        }
    }

    #[test]
    fn perturbation_has_exact_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        for _ in 0..20 {
            let p = perturb_pose(&base, 0.5, 5f64.to_radians(), &mut rng);
            let (dt, dr) = pose_delta(&base, &p);
            assert!((dt - 0.5).abs() < 1e-12);
            assert!((dr - 5f64.to_radians()).abs() < 1e-12);
        }
    }
}
