//! Levenberg–Marquardt refinement of a single camera pose against fixed
//! world points, with an optional Huber loss applied by iteratively
//! reweighted least squares.

use nalgebra::{Matrix6, Vector6};

use super::residuals::{perturb_pose, Projector};
use super::{Correspondence2D3D, PnpError, SolverReport, MIN_CORRESPONDENCES};
use crate::scene::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaConfig {
    pub max_iters: usize,
    /// Huber threshold in pixels on the per-correspondence residual norm;
    /// `None` is plain least squares.
    pub huber_delta: Option<f64>,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            huber_delta: Some(2.0),
        }
    }
}

const STEP_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-12;
const LAMBDA_INIT: f64 = 1e-4;
const MAX_REJECTIONS: usize = 10;

fn robust_cost(s: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if s > d => d * (s - 0.5 * d),
        _ => 0.5 * s * s,
    }
}

fn robust_weight(s: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if s > d => d / s,
        _ => 1.0,
    }
}

/// Total robust cost, or `None` if any correspondence is not in front of
/// the camera.
fn total_cost(corrs: &[Correspondence2D3D], cam: &CameraIntrinsics, pose: &Pose, delta: Option<f64>) -> Option<f64> {
    let proj = Projector::new(pose, cam);
    corrs
        .iter()
        .map(|c| proj.residual(c).map(|r| robust_cost(r.norm(), delta)))
        .sum()
}

/// Refines `init` and reports the final pose. All correspondences are
/// treated as inliers apart from those behind the camera at `init`, which
/// are excluded up front.
pub fn refine_ba(
    corrs: &[Correspondence2D3D],
    cam: &CameraIntrinsics,
    init: &Pose,
    config: &BaConfig,
) -> Result<SolverReport, PnpError> {
    refine_ba_traced(corrs, cam, init, config).map(|(r, _)| r)
}

/// As [`refine_ba`], also returning the robust cost before the first and
/// after every accepted step.
pub fn refine_ba_traced(
    corrs: &[Correspondence2D3D],
    cam: &CameraIntrinsics,
    init: &Pose,
    config: &BaConfig,
) -> Result<(SolverReport, Vec<f64>), PnpError> {
    let proj = Projector::new(init, cam);
    let active: Vec<Correspondence2D3D> = corrs.iter().filter(|c| proj.residual(c).is_some()).copied().collect();
    if active.is_empty() && !corrs.is_empty() {
        return Err(PnpError::CheiralityViolation { index: 0 });
    }
    if active.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::InsufficientMatches {
            needed: MIN_CORRESPONDENCES,
            got: active.len(),
        });
    }

    let delta = config.huber_delta;
    let mut pose = *init;
    let mut cost = total_cost(&active, cam, &pose, delta).expect("active points are in front");
    let mut history = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < config.max_iters {
        iterations += 1;
        let proj = Projector::new(&pose, cam);
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in &active {
            let (r, j) = proj
                .residual_and_jacobian(c)
                .expect("accepted poses keep active points in front");
            let w = robust_weight(r.norm(), delta);
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }

        let mut accepted = false;
        let mut rejections = 0;
        while rejections < MAX_REJECTIONS {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                rejections += 1;
                continue;
            };
            let step = -chol.solve(&g);
            if step.norm() < STEP_TOL {
                converged = true;
                break;
            }
            let candidate = perturb_pose(&pose, &step);
            match total_cost(&active, cam, &candidate, delta) {
                Some(c) if c < cost => {
                    let change = cost - c;
                    pose = candidate;
                    cost = c;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if change < COST_TOL || cost == 0.0 {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    rejections += 1;
                }
            }
        }
        if !accepted && !converged {
            if h.cholesky().is_none() && rejections >= MAX_REJECTIONS {
                return Err(PnpError::SingularSystem);
            }
            // no descent direction left at this damping: local minimum
            converged = true;
        }
    }

    let proj = Projector::new(&pose, cam);
    let mean = active
        .iter()
        .map(|c| proj.residual(c).map_or(0.0, |r| r.norm()))
        .sum::<f64>()
        / active.len() as f64;
    Ok((
        SolverReport {
            pose,
            inlier_count: active.len(),
            mean_reprojection_error: mean,
            iterations,
            converged,
        },
        history,
    ))
}
