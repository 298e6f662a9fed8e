//! 2D–2D matching between a query image and a rendered reference view.
//!
//! Three implementations share the [`Matcher`] contract: a classical
//! Harris/gradient-histogram reference matcher, a ground-truth oracle for
//! synthetic experiments, and a file bridge for matches computed by an
//! external program.

mod external;
mod harris;
mod matching;
mod oracle;

use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::render::RenderedView;
use crate::scene::{CameraIntrinsics, Pose};

pub use external::{format_matches, load_external_matches, parse_matches, save_external_matches, MatchFile};
pub use harris::{detect_and_describe, DetectorConfig, DESCRIPTOR_DIM};
pub use matching::{match_features, MatcherConfig};
pub use oracle::{displaced_outlier, oracle_match, OracleConfig, OracleMatches};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image is {width}x{height}; both sides must be at least {min} px")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("cannot match an empty keypoint list")]
    EmptyKeypoints,
    #[error("only {available} valid reference pixels are visible from the query, need {needed}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("the oracle matcher needs the query's ground-truth pose")]
    MissingGroundTruth,
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Bounds { line: usize, message: String },
    #[error("match file is for {found:?}, expected {expected:?} (query w,h, reference w,h)")]
    DimensionMismatch { expected: [usize; 4], found: [usize; 4] },
}

/// A detected interest point. `descriptor` has unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub position: Vector2<f64>,
    /// Detection confidence in [0, 1].
    pub score: f64,
    pub descriptor: Vec<f32>,
}

/// One query↔reference pixel correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatch {
    pub pixel_query: Vector2<f64>,
    pub pixel_ref: Vector2<f64>,
    /// In [0, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub count: usize,
    pub mean_confidence: f64,
    /// Normalized occupancy entropy of query pixels over an 8×8 grid.
    pub uniformity: f64,
}

const UNIFORMITY_GRID: usize = 8;

/// Count, mean confidence and spatial uniformity of a match set.
/// `image_dims` is the query image `(width, height)`.
pub fn match_stats(matches: &[FeatureMatch], image_dims: (usize, usize)) -> MatchStats {
    if matches.is_empty() {
        return MatchStats::default();
    }
    let (w, h) = (image_dims.0.max(1) as f64, image_dims.1.max(1) as f64);
    let g = UNIFORMITY_GRID;
    let mut cells = [0usize; UNIFORMITY_GRID * UNIFORMITY_GRID];
    for m in matches {
        let cx = ((m.pixel_query.x / w * g as f64).floor().max(0.0) as usize).min(g - 1);
        let cy = ((m.pixel_query.y / h * g as f64).floor().max(0.0) as usize).min(g - 1);
        cells[cy * g + cx] += 1;
    }
    let n = matches.len() as f64;
    let entropy: f64 = cells
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    MatchStats {
        count: matches.len(),
        mean_confidence: matches.iter().map(|m| m.confidence).sum::<f64>() / n,
        uniformity: (entropy / ((g * g) as f64).ln()).clamp(0.0, 1.0),
    }
}

/// Everything a matcher may need for one query/reference pair.
#[derive(Debug, Clone, Copy)]
pub struct MatchRequest<'a> {
    pub query: &'a Image,
    pub reference: &'a RenderedView,
    pub cam: &'a CameraIntrinsics,
    pub query_id: u64,
    /// 1-based refinement iteration.
    pub iteration: usize,
    /// Only available in synthetic experiments.
    pub query_pose_gt: Option<&'a Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutput {
    pub matches: Vec<FeatureMatch>,
    /// Wall time of keypoint detection in ms, when the matcher has such a stage.
    pub detect_ms: Option<f64>,
    /// Wall time of descriptor matching in ms.
    pub match_ms: Option<f64>,
}

pub trait Matcher: Send + Sync {
    fn match_views(&self, request: &MatchRequest<'_>) -> Result<MatchOutput, FeatureError>;
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Harris keypoints, gradient-histogram descriptors, mutual nearest
/// neighbours with a ratio test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMatcher {
    pub detector: DetectorConfig,
    pub matcher: MatcherConfig,
}

impl Matcher for ReferenceMatcher {
    fn match_views(&self, req: &MatchRequest<'_>) -> Result<MatchOutput, FeatureError> {
        let t = Instant::now();
        let (kq, kr) = rayon::join(
            || detect_and_describe(req.query, &self.detector),
            || detect_and_describe(&req.reference.rgb, &self.detector),
        );
        let (kq, kr) = (kq?, kr?);
        let detect_ms = elapsed_ms(t);
        let t = Instant::now();
        let matches = if kq.is_empty() || kr.is_empty() {
            Vec::new()
        } else {
            match_features(&kq, &kr, &self.matcher)?
        };
        Ok(MatchOutput {
            matches,
            detect_ms: Some(detect_ms),
            match_ms: Some(elapsed_ms(t)),
        })
    }
}

/// Samples matches from ground-truth geometry; see [`oracle_match`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleMatcher {
    pub config: OracleConfig,
}

impl Matcher for OracleMatcher {
    fn match_views(&self, req: &MatchRequest<'_>) -> Result<MatchOutput, FeatureError> {
        let gt = req.query_pose_gt.ok_or(FeatureError::MissingGroundTruth)?;
        let t = Instant::now();
        let out = oracle_match(gt, req.reference, req.cam, &self.config, req.query_id, req.iteration)?;
        Ok(MatchOutput {
            matches: out.matches,
            detect_ms: None,
            match_ms: Some(elapsed_ms(t)),
        })
    }
}

/// Reads `<dir>/<query-id>_iter<k>.matches`, with the query id zero-padded
/// to six digits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalMatcher {
    pub dir: std::path::PathBuf,
}

impl ExternalMatcher {
    pub fn path_for(&self, query_id: u64, iteration: usize) -> std::path::PathBuf {
        self.dir.join(format!("{query_id:06}_iter{iteration}.matches"))
    }
}

impl Matcher for ExternalMatcher {
    fn match_views(&self, req: &MatchRequest<'_>) -> Result<MatchOutput, FeatureError> {
        let t = Instant::now();
        let file = load_external_matches(&self.path_for(req.query_id, req.iteration))?;
        let expected = [
            req.query.width(),
            req.query.height(),
            req.reference.rgb.width(),
            req.reference.rgb.height(),
        ];
        if file.dims != expected {
            return Err(FeatureError::DimensionMismatch {
                expected,
                found: file.dims,
            });
        }
        Ok(MatchOutput {
            matches: file.matches,
            detect_ms: None,
            match_ms: Some(elapsed_ms(t)),
        })
    }
}
