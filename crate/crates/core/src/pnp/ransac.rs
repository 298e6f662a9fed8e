use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ba::{refine_ba, BaConfig};
use super::epnp::epnp;
use super::residuals::Projector;
use super::{Correspondence2D3D, PnpError, SolverReport, MIN_CORRESPONDENCES};
use crate::scene::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection error in pixels below which a correspondence is an
    /// inlier.
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 256,
            threshold_px: 3.0,
            min_inliers: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PnpConfig {
    pub ransac: RansacConfig,
    pub ba: BaConfig,
}

/// Rounds of "refine on inliers, re-select inliers" after consensus.
const MAX_REFIT_ROUNDS: usize = 3;

fn inliers(corrs: &[Correspondence2D3D], cam: &CameraIntrinsics, pose: &Pose, threshold: f64) -> (Vec<usize>, f64) {
    let proj = Projector::new(pose, cam);
    let mut idx = Vec::new();
    let mut err = 0.0;
    for (i, c) in corrs.iter().enumerate() {
        if let Some(r) = proj.residual(c) {
            let e = r.norm();
            if e < threshold {
                idx.push(i);
                err += e;
            }
        }
    }
    let mean = if idx.is_empty() {
        f64::INFINITY
    } else {
        err / idx.len() as f64
    };
    (idx, mean)
}

fn select(corrs: &[Correspondence2D3D], idx: &[usize]) -> Vec<Correspondence2D3D> {
    idx.iter().map(|&i| corrs[i]).collect()
}

/// Robust pose from noisy correspondences: seeded minimal-sample EPnP
/// hypotheses, consensus by inlier count, then EPnP and Levenberg–Marquardt
/// on the consensus set.
///
/// The input is sorted into a canonical order first, so the result does not
/// depend on the order correspondences are supplied in.
pub fn solve_pnp(
    corrs: &[Correspondence2D3D],
    cam: &CameraIntrinsics,
    config: &PnpConfig,
) -> Result<SolverReport, PnpError> {
    let rc = &config.ransac;
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::InsufficientMatches {
            needed: MIN_CORRESPONDENCES,
            got: corrs.len(),
        });
    }
    let mut sorted = corrs.to_vec();
    sorted.sort_by(|a, b| {
        let ka = [a.pixel.x, a.pixel.y, a.world_point.x, a.world_point.y, a.world_point.z];
        let kb = [b.pixel.x, b.pixel.y, b.world_point.x, b.world_point.y, b.world_point.z];
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let corrs = &sorted[..];

    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let samples: Vec<Vec<usize>> = (0..rc.iterations)
        .map(|_| sample(&mut rng, corrs.len(), MIN_CORRESPONDENCES).into_vec())
        .collect();

    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(k, s)| {
            let rep = epnp(&select(corrs, s), cam).ok()?;
            let (idx, err) = inliers(corrs, cam, &rep.pose, rc.threshold_px);
            Some((idx.len(), err, k, rep.pose))
        })
        .reduce_with(|a, b| {
            let better = b.0 > a.0 || (b.0 == a.0 && (b.1 < a.1 || (b.1 == a.1 && b.2 < a.2)));
            if better {
                b
            } else {
                a
            }
        });

    let Some((count, _, _, hyp_pose)) = best else {
        return Err(PnpError::NoConsensus {
            best: 0,
            required: rc.min_inliers.max(MIN_CORRESPONDENCES),
        });
    };
    let required = rc.min_inliers.max(MIN_CORRESPONDENCES);
    if count < required {
        return Err(PnpError::NoConsensus { best: count, required });
    }

    let (mut inlier_idx, _) = inliers(corrs, cam, &hyp_pose, rc.threshold_px);
    let mut pose = hyp_pose;
    if let Ok(rep) = epnp(&select(corrs, &inlier_idx), cam) {
        let (idx, _) = inliers(corrs, cam, &rep.pose, rc.threshold_px);
        if idx.len() >= inlier_idx.len() {
            pose = rep.pose;
            inlier_idx = idx;
        }
    }

    let mut total_iters = 0;
    let mut converged = false;
    for _ in 0..MAX_REFIT_ROUNDS {
        let subset = select(corrs, &inlier_idx);
        let rep = match refine_ba(&subset, cam, &pose, &config.ba) {
            Ok(r) => r,
            Err(_) => break,
        };
        total_iters += rep.iterations;
        converged = rep.converged;
        let (idx, _) = inliers(corrs, cam, &rep.pose, rc.threshold_px);
        if idx.len() < required {
            break;
        }
        pose = rep.pose;
        if idx == inlier_idx {
            break;
        }
        inlier_idx = idx;
    }

    let (idx, err) = inliers(corrs, cam, &pose, rc.threshold_px);
    if idx.len() < required {
        return Err(PnpError::NoConsensus {
            best: idx.len(),
            required,
        });
    }
    Ok(SolverReport {
        pose,
        inlier_count: idx.len(),
        mean_reprojection_error: err,
        iterations: total_iters,
        converged,
    })
}
