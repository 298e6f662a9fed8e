use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatch};
use crate::render::RenderedView;
use crate::scene::{CameraIntrinsics, Pose};

/// Outliers land between these distances (px, per axis for the upper bound)
/// from the true projection.
pub const OUTLIER_MIN_OFFSET_PX: f64 = 8.0;
pub const OUTLIER_MAX_OFFSET_PX: f64 = 32.0;
/// Candidates at least this far inside the query image are preferred, so
/// that pixel noise rarely needs clamping.
const INTERIOR_MARGIN_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Matches per call.
    pub n: usize,
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n: 400,
            pixel_noise_sigma: 0.5,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatches {
    pub matches: Vec<FeatureMatch>,
    /// Side channel: `outlier[i]` tells whether `matches[i]` was corrupted.
    pub outlier: Vec<bool>,
}

/// A wrong query pixel for a reference pixel whose true query projection
/// is `truth`: displaced uniformly within a square of half-width
/// [`OUTLIER_MAX_OFFSET_PX`], at least [`OUTLIER_MIN_OFFSET_PX`] away, and
/// inside the image. Drawn by rejection.
pub fn displaced_outlier<R: Rng>(truth: &Vector2<f64>, cam: &CameraIntrinsics, rng: &mut R) -> Vector2<f64> {
    let m = OUTLIER_MAX_OFFSET_PX;
    loop {
        let offset = Vector2::new(rng.random_range(-m..m), rng.random_range(-m..m));
        let p = truth + offset;
        if offset.norm() >= OUTLIER_MIN_OFFSET_PX && cam.contains(&p) {
            return p;
        }
    }
}

/// Per-call generator keyed on (seed, query id, iteration) so that every
/// refinement iteration of every query draws an independent, reproducible
/// sample.
fn call_rng(seed: u64, query_id: u64, iteration: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&query_id.to_le_bytes());
    key[16..24].copy_from_slice(&(iteration as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Ground-truth matches between a reference view and a query whose true
/// pose is known: samples `n` reference pixels with valid depth that are
/// visible in the query, lifts each to the world, projects it into the
/// query, then adds Gaussian pixel noise and replaces exactly
/// `round(outlier_fraction · n)` query pixels with displaced outliers.
///
/// Reference pixels are integer pixel centers. Confidence is 1 for inliers
/// and 0 for outliers.
pub fn oracle_match(
    query_pose_gt: &Pose,
    reference: &RenderedView,
    cam: &CameraIntrinsics,
    config: &OracleConfig,
    query_id: u64,
    iteration: usize,
) -> Result<OracleMatches, FeatureError> {
    if !(0.0..=1.0).contains(&config.outlier_fraction) {
        return Err(FeatureError::InvalidConfig(format!(
            "outlier_fraction {} outside [0, 1]",
            config.outlier_fraction
        )));
    }
    if !(config.pixel_noise_sigma >= 0.0 && config.pixel_noise_sigma.is_finite()) {
        return Err(FeatureError::InvalidConfig(format!(
            "pixel_noise_sigma {} must be finite and non-negative",
            config.pixel_noise_sigma
        )));
    }
    let depth = &reference.depth;
    let (w, h) = (depth.width(), depth.height());
    let (xmax, ymax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);

    // (reference pixel, true query pixel, interior?)
    let mut candidates: Vec<(Vector2<f64>, Vector2<f64>, bool)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y, 0) as f64;
            if d <= 0.0 {
                continue;
            }
            let pr = Vector2::new(x as f64, y as f64);
            let world = reference.pose.transform_point(&cam.back_project(&pr, d));
            let pq_cam = query_pose_gt.inverse_transform_point(&world);
            if pq_cam.z <= cam.near {
                continue;
            }
            let pq = cam.project(&pq_cam);
            if !cam.contains(&pq) {
                continue;
            }
            let m = INTERIOR_MARGIN_PX;
            let interior = pq.x >= m && pq.y >= m && pq.x <= xmax - m && pq.y <= ymax - m;
            candidates.push((pr, pq, interior));
        }
    }
    let interior: Vec<_> = candidates.iter().filter(|c| c.2).copied().collect();
    let pool = if interior.len() >= config.n {
        interior
    } else {
        candidates
    };
    if pool.len() < config.n {
        return Err(FeatureError::InsufficientCandidates {
            needed: config.n,
            available: pool.len(),
        });
    }

    let mut rng = call_rng(config.seed, query_id, iteration);
    let mut picked = sample(&mut rng, pool.len(), config.n).into_vec();
    picked.sort_unstable();
    let n_out = (config.outlier_fraction * config.n as f64).round() as usize;
    let mut outlier = vec![false; config.n];
    for i in sample(&mut rng, config.n, n_out) {
        outlier[i] = true;
    }

    let noise = Normal::new(0.0, config.pixel_noise_sigma).expect("validated sigma");
    let matches = picked
        .iter()
        .zip(&outlier)
        .map(|(&k, &bad)| {
            let (pr, pq, _) = pool[k];
            let pixel_query = if bad {
                displaced_outlier(&pq, cam, &mut rng)
            } else if config.pixel_noise_sigma > 0.0 {
                let p = pq + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                Vector2::new(p.x.clamp(0.0, xmax), p.y.clamp(0.0, ymax))
            } else {
                pq
            };
            FeatureMatch {
                pixel_query,
                pixel_ref: pr,
                confidence: if bad { 0.0 } else { 1.0 },
            }
        })
        .collect();
    Ok(OracleMatches { matches, outlier })
}
