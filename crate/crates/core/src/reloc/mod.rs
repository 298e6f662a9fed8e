//! Anchor database, retrieval, depth lifting and the iterative
//! render → match → PnP refinement loop.

mod anchors;
mod store;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{match_stats, MatchRequest, Matcher};
use crate::image::{Image, ImageError};
use crate::pnp::{solve_pnp, PnpConfig, PnpError};
use crate::render::RenderedView;
use crate::scene::{pose_delta, CameraIntrinsics, Pose, SplatScene};

pub use anchors::{build_anchor_db, global_descriptor, lift_to_3d, retrieve, sample_depth, GLOBAL_DESCRIPTOR_DIM};
pub use store::{load_anchor_db, save_anchor_db};

#[derive(Debug, Error)]
pub enum RelocError {
    #[error("anchor database is empty")]
    EmptyDatabase,
    #[error("camera mismatch: {0}")]
    CameraMismatch(String),
    #[error("anchor spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("trajectory length {length:.3} m is shorter than the anchor spacing {spacing} m")]
    TrajectoryTooShort { length: f64, spacing: f64 },
    #[error("anchors {from} and {to} are {gap:.3} m apart, outside [0.5, 2] x spacing {spacing} m")]
    AnchorGap { from: u64, to: u64, gap: f64, spacing: f64 },
    #[error("duplicate anchor id {0}")]
    DuplicateAnchor(u64),
    #[error("anchor {id}: {message}")]
    InvalidAnchor { id: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// A stored reference render with its whole-image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRecord {
    pub id: u64,
    pub view: RenderedView,
    pub descriptor: Vec<f64>,
}

impl AnchorRecord {
    pub fn pose(&self) -> &Pose {
        &self.view.pose
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDatabase {
    pub camera: CameraIntrinsics,
    /// Target distance between consecutive anchors, meters.
    pub spacing: f64,
    pub anchors: Vec<AnchorRecord>,
}

impl AnchorDatabase {
    pub fn validate(&self) -> Result<(), RelocError> {
        if self.anchors.is_empty() {
            return Err(RelocError::EmptyDatabase);
        }
        let (w, h) = (self.camera.width, self.camera.height);
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.anchors {
            if !ids.insert(a.id) {
                return Err(RelocError::DuplicateAnchor(a.id));
            }
            let bad = |message: String| RelocError::InvalidAnchor { id: a.id, message };
            if (a.view.rgb.width(), a.view.rgb.height(), a.view.rgb.channels()) != (w, h, 3) {
                return Err(bad(format!("rgb is not {w}x{h}x3")));
            }
            if (a.view.depth.width(), a.view.depth.height(), a.view.depth.channels()) != (w, h, 1) {
                return Err(bad(format!("depth is not {w}x{h}x1")));
            }
            if a.descriptor.len() != GLOBAL_DESCRIPTOR_DIM || !a.descriptor.iter().all(|v| v.is_finite()) {
                return Err(bad("descriptor must be 192 finite values".into()));
            }
        }
        for pair in self.anchors.windows(2) {
            let gap = (pair[1].pose().translation() - pair[0].pose().translation()).norm();
            if gap < 0.5 * self.spacing - 1e-9 || gap > 2.0 * self.spacing + 1e-9 {
                return Err(RelocError::AnchorGap {
                    from: pair[0].id,
                    to: pair[1].id,
                    gap,
                    spacing: self.spacing,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelocConfig {
    pub max_iters: usize,
    /// Convergence thresholds on the change between consecutive estimates;
    /// both must hold.
    pub trans_eps: f64,
    pub rot_eps: f64,
    pub min_matches: usize,
    pub pnp: PnpConfig,
}

impl Default for RelocConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            trans_eps: 0.01,
            rot_eps: 0.01,
            min_matches: 12,
            pnp: PnpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelocStatus {
    Converged,
    MaxIterations,
    Failed,
}

/// Wall time per pipeline stage, milliseconds; `None` when the stage did
/// not run in that iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub detect_ms: Option<f64>,
    pub match_ms: Option<f64>,
    pub pnp_ms: Option<f64>,
    pub render_ms: Option<f64>,
}

impl StageTimes {
    pub fn total_ms(&self) -> f64 {
        [self.detect_ms, self.match_ms, self.pnp_ms, self.render_ms]
            .iter()
            .flatten()
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// 1-based.
    pub iteration: usize,
    /// Estimate after this iteration; unchanged from the previous one when
    /// the iteration failed.
    pub pose: Pose,
    pub match_count: usize,
    pub mean_confidence: f64,
    pub uniformity: f64,
    /// Matches that survived depth lifting.
    pub lifted_count: usize,
    pub inlier_count: Option<usize>,
    pub translation_delta: Option<f64>,
    pub rotation_delta: Option<f64>,
    /// Kept out of the serialized result so reruns are byte-identical.
    #[serde(skip)]
    pub timing: StageTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocalizationResult {
    pub query_id: u64,
    pub anchor_id: u64,
    pub status: RelocStatus,
    /// Latest successful estimate (the retrieved anchor pose if none).
    pub pose: Pose,
    pub iterations: usize,
    pub error: Option<String>,
    pub traces: Vec<IterationTrace>,
}

/// Per-iteration stage times of one result, written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub query_id: u64,
    pub iterations: Vec<StageTimes>,
}

impl RelocalizationResult {
    pub fn timing_record(&self) -> TimingRecord {
        TimingRecord {
            query_id: self.query_id,
            iterations: self.traces.iter().map(|t| t.timing).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// One query image and what is known about it.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub id: u64,
    pub image: &'a Image,
    /// Only for synthetic experiments with the oracle matcher.
    pub pose_gt: Option<&'a Pose>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Relocalizes one query: retrieves the most similar anchor, then
/// alternates matching against a reference view, lifting to 3D and solving
/// PnP, re-rendering at each new estimate, until the estimate moves less
/// than both thresholds or `max_iters` is reached.
pub fn relocalize(
    query: &Query<'_>,
    db: &AnchorDatabase,
    scene: &SplatScene,
    cam: &CameraIntrinsics,
    matcher: &dyn Matcher,
    config: &RelocConfig,
) -> Result<RelocalizationResult, RelocError> {
    relocalize_observed(query, db, scene, cam, matcher, config, &mut |_, _| {})
}

/// As [`relocalize`], calling `observe(iteration, reference)` with every
/// reference view used.
#[allow(clippy::too_many_arguments)]
pub fn relocalize_observed(
    query: &Query<'_>,
    db: &AnchorDatabase,
    scene: &SplatScene,
    cam: &CameraIntrinsics,
    matcher: &dyn Matcher,
    config: &RelocConfig,
    observe: &mut dyn FnMut(usize, &RenderedView),
) -> Result<RelocalizationResult, RelocError> {
    if db.anchors.is_empty() {
        return Err(RelocError::EmptyDatabase);
    }
    if *cam != db.camera {
        return Err(RelocError::CameraMismatch(
            "camera differs from the anchor database camera".into(),
        ));
    }
    if (query.image.width(), query.image.height()) != (cam.width, cam.height) {
        return Err(RelocError::CameraMismatch(format!(
            "query is {}x{}, camera is {}x{}",
            query.image.width(),
            query.image.height(),
            cam.width,
            cam.height
        )));
    }

    let anchor = retrieve(query.image, db)?;
    let mut current = *anchor.pose();
    let mut traces = Vec::new();
    let mut status = RelocStatus::MaxIterations;
    let mut error = None;
    let dims = (cam.width, cam.height);

    for iteration in 1..=config.max_iters {
        let mut timing = StageTimes::default();
        let rendered;
        let reference = if iteration == 1 {
            &anchor.view
        } else {
            let t = Instant::now();
            rendered = RenderedView::render(scene, &current, cam);
            timing.render_ms = Some(ms(t));
            &rendered
        };
        observe(iteration, reference);

        let request = MatchRequest {
            query: query.image,
            reference,
            cam,
            query_id: query.id,
            iteration,
            query_pose_gt: query.pose_gt,
        };
        let mut trace = IterationTrace {
            iteration,
            pose: current,
            match_count: 0,
            mean_confidence: 0.0,
            uniformity: 0.0,
            lifted_count: 0,
            inlier_count: None,
            translation_delta: None,
            rotation_delta: None,
            timing,
        };
        let out = match matcher.match_views(&request) {
            Ok(o) => o,
            Err(e) => {
                status = RelocStatus::Failed;
                error = Some(format!("iteration {iteration}: matcher: {e}"));
                traces.push(trace);
                break;
            }
        };
        trace.timing.detect_ms = out.detect_ms;
        trace.timing.match_ms = out.match_ms;
        let stats = match_stats(&out.matches, dims);
        trace.match_count = stats.count;
        trace.mean_confidence = stats.mean_confidence;
        trace.uniformity = stats.uniformity;

        let corrs = lift_to_3d(&out.matches, reference, cam);
        trace.lifted_count = corrs.len();
        if corrs.len() < config.min_matches {
            status = RelocStatus::Failed;
            error = Some(format!(
                "iteration {iteration}: {}",
                PnpError::InsufficientMatches {
                    needed: config.min_matches,
                    got: corrs.len(),
                }
            ));
            traces.push(trace);
            break;
        }

        let t = Instant::now();
        let solved = solve_pnp(&corrs, cam, &config.pnp);
        trace.timing.pnp_ms = Some(ms(t));
        let report = match solved {
            Ok(r) => r,
            Err(e) => {
                status = RelocStatus::Failed;
                error = Some(format!("iteration {iteration}: {e}"));
                traces.push(trace);
                break;
            }
        };
        let (dt, dr) = pose_delta(&current, &report.pose);
        current = report.pose;
        trace.pose = current;
        trace.inlier_count = Some(report.inlier_count);
        trace.translation_delta = Some(dt);
        trace.rotation_delta = Some(dr);
        traces.push(trace);
        if dt <= config.trans_eps && dr <= config.rot_eps {
            status = RelocStatus::Converged;
            break;
        }
    }

    Ok(RelocalizationResult {
        query_id: query.id,
        anchor_id: anchor.id,
        status,
        pose: current,
        iterations: traces.len(),
        error,
        traces,
    })
}
