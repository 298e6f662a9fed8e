//! Accuracy and timing metrics over relocalization results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnp::umeyama_align;
use crate::reloc::{IterationTrace, StageTimes};
use crate::scene::{pose_delta, Pose, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("trajectories differ in length: estimated {estimated}, ground truth {ground_truth}")]
    LengthMismatch { estimated: usize, ground_truth: usize },
    #[error("entry {position}: estimated index {estimated} does not match ground-truth index {ground_truth}")]
    IndexMismatch {
        position: usize,
        estimated: u64,
        ground_truth: u64,
    },
    #[error("thresholds must be positive, got {0} m and {1} deg")]
    InvalidThreshold(f64, f64),
    #[error("bin edges must be at least two finite, strictly increasing values")]
    InvalidEdges,
    #[error("alignment failed: {0}")]
    Alignment(String),
}

/// Summary of absolute translation errors, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteStats {
    pub rmse: f64,
    /// Population standard deviation.
    pub std: f64,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl AteStats {
    pub const CSV_HEADER: &'static str = "seq,rmse,std,mean,median,min,max";

    pub fn csv_row(&self, seq: &str) -> String {
        format!(
            "{seq},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.rmse, self.std, self.mean, self.median, self.min, self.max
        )
    }
}

/// Header plus one row per sequence.
pub fn ate_csv(rows: &[(String, AteStats)]) -> String {
    let mut out = String::from(AteStats::CSV_HEADER);
    out.push('\n');
    for (seq, stats) in rows {
        out.push_str(&stats.csv_row(seq));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorPair {
    /// Meters.
    pub translation_error: f64,
    /// Degrees.
    pub rotation_error: f64,
}

/// Per-pose absolute errors; entries are paired by position and must carry
/// the same indices.
pub fn pose_errors(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<Vec<PoseErrorPair>, EvalError> {
    check_paired(estimated, ground_truth)?;
    Ok(estimated
        .entries()
        .iter()
        .zip(ground_truth.entries())
        .map(|((_, e), (_, g))| pair(e, g))
        .collect())
}

fn pair(estimated: &Pose, ground_truth: &Pose) -> PoseErrorPair {
    let (t, r) = pose_delta(estimated, ground_truth);
    PoseErrorPair {
        translation_error: t,
        rotation_error: r.to_degrees(),
    }
}

fn check_paired(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<(), EvalError> {
    if estimated.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            estimated: estimated.len(),
            ground_truth: ground_truth.len(),
        });
    }
    for (position, ((ei, _), (gi, _))) in estimated.entries().iter().zip(ground_truth.entries()).enumerate() {
        if ei != gi {
            return Err(EvalError::IndexMismatch {
                position,
                estimated: *ei,
                ground_truth: *gi,
            });
        }
    }
    Ok(())
}

/// Rigidly aligns the estimated trajectory onto the ground truth by its
/// camera centers. Off by default everywhere: estimates are absolute poses
/// in the map frame.
pub fn align_trajectory(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<Trajectory, EvalError> {
    check_paired(estimated, ground_truth)?;
    let a: Vec<_> = estimated.poses().map(|p| *p.translation()).collect();
    let b: Vec<_> = ground_truth.poses().map(|p| *p.translation()).collect();
    let t = umeyama_align(&a, &b).map_err(|e| EvalError::Alignment(e.to_string()))?;
    Trajectory::new(estimated.entries().iter().map(|(i, p)| (*i, t.compose(p))).collect())
        .map_err(|e| EvalError::Alignment(e.to_string()))
}

pub fn ate_statistics(errors: &[f64]) -> Result<AteStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(AteStats {
        rmse: mean_sq.sqrt(),
        std: var.sqrt(),
        mean,
        median,
        min: sorted[0],
        max: sorted[k - 1],
    })
}

/// Fraction of pairs strictly below both thresholds.
pub fn recall_at(pairs: &[PoseErrorPair], trans_thresh: f64, rot_thresh_deg: f64) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(trans_thresh > 0.0 && rot_thresh_deg > 0.0) {
        return Err(EvalError::InvalidThreshold(trans_thresh, rot_thresh_deg));
    }
    let hits = pairs
        .iter()
        .filter(|p| p.translation_error < trans_thresh && p.rotation_error < rot_thresh_deg)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub trans_thresh: f64,
    pub rot_thresh_deg: f64,
    pub recall: f64,
}

/// Recall at each `(meters, degrees)` threshold pair.
pub fn recall_curve(pairs: &[PoseErrorPair], thresholds: &[(f64, f64)]) -> Result<Vec<RecallPoint>, EvalError> {
    thresholds
        .iter()
        .map(|&(t, r)| {
            Ok(RecallPoint {
                trans_thresh: t,
                rot_thresh_deg: r,
                recall: recall_at(pairs, t, r)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`.
    pub counts: Vec<usize>,
    /// Values outside `[edges[0], edges[last])`, including NaN.
    pub overflow: usize,
}

pub fn error_histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, EvalError> {
    if edges.len() < 2 || !edges.iter().all(|e| e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidEdges);
    }
    let mut counts = vec![0; edges.len() - 1];
    let mut overflow = 0;
    for &v in values {
        // index of the first edge strictly greater than v
        let upper = edges.partition_point(|&e| e <= v);
        if upper == 0 || upper == edges.len() || v.is_nan() {
            overflow += 1;
        } else {
            counts[upper - 1] += 1;
        }
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        overflow,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mean_ms: f64,
    pub count: usize,
}

impl StageSummary {
    fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        let (sum, count) = samples.fold((0.0, 0), |(s, c), x| (s + x, c + 1));
        Self {
            mean_ms: if count > 0 { sum / count as f64 } else { 0.0 },
            count,
        }
    }

    pub fn total_ms(&self) -> f64 {
        self.mean_ms * self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub detect: StageSummary,
    #[serde(rename = "match")]
    pub matching: StageSummary,
    pub pnp: StageSummary,
    pub render: StageSummary,
    /// Sum of every iteration's stage times, seconds.
    pub total_s: f64,
}

pub fn timing_report(traces: &[IterationTrace]) -> Result<TimingReport, EvalError> {
    let times: Vec<StageTimes> = traces.iter().map(|t| t.timing).collect();
    timing_report_from_times(&times)
}

/// As [`timing_report`], from bare per-iteration stage times (as stored in
/// timing files).
pub fn timing_report_from_times(times: &[StageTimes]) -> Result<TimingReport, EvalError> {
    if times.is_empty() {
        return Err(EvalError::Empty);
    }
    let stage = |f: fn(&StageTimes) -> Option<f64>| StageSummary::from_samples(times.iter().filter_map(f));
    Ok(TimingReport {
        detect: stage(|t| t.detect_ms),
        matching: stage(|t| t.match_ms),
        pnp: stage(|t| t.pnp_ms),
        render: stage(|t| t.render_ms),
        total_s: times.iter().map(|t| t.total_ms()).sum::<f64>() / 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::axis_angle;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn traj(poses: Vec<Pose>) -> Trajectory {
        Trajectory::from_poses(poses)
    }

    fn trace(d: f64, m: f64, p: f64, r: f64) -> IterationTrace {
        IterationTrace {
            iteration: 1,
            pose: Pose::identity(),
            match_count: 0,
            mean_confidence: 0.0,
            uniformity: 0.0,
            lifted_count: 0,
            inlier_count: None,
            translation_delta: None,
            rotation_delta: None,
            timing: StageTimes {
                detect_ms: Some(d),
                match_ms: Some(m),
                pnp_ms: Some(p),
                render_ms: Some(r),
            },
        }
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = traj(vec![
            Pose::identity(),
            Pose::new(axis_angle(Vector3::y(), 0.3), Vector3::new(1.0, 2.0, 3.0)),
        ]);
        for p in pose_errors(&t, &t).unwrap() {
            assert_eq!((p.translation_error, p.rotation_error), (0.0, 0.0));
        }
    }

    #[test]
    fn three_four_five_offset() {
        let e = traj(vec![Pose::from_translation(Vector3::new(0.3, 0.4, 0.0))]);
        let p = pose_errors(&e, &traj(vec![Pose::identity()])).unwrap()[0];
        assert!((p.translation_error - 0.5).abs() < 1e-12);
        assert_eq!(p.rotation_error, 0.0);
    }

    #[test]
    fn two_degree_rotation_about_z() {
        let e = traj(vec![Pose::new(
            axis_angle(Vector3::z(), 2f64.to_radians()),
            Vector3::zeros(),
        )]);
        let p = pose_errors(&e, &traj(vec![Pose::identity()])).unwrap()[0];
        assert_eq!(p.translation_error, 0.0);
        assert!((p.rotation_error - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_trajectories_are_errors() {
        let one = traj(vec![Pose::identity()]);
        let two = traj(vec![Pose::identity(), Pose::identity()]);
        assert!(matches!(pose_errors(&one, &two), Err(EvalError::LengthMismatch { .. })));
        let shifted = Trajectory::new(vec![(5, Pose::identity())]).unwrap();
        assert_eq!(
            pose_errors(&one, &shifted),
            Err(EvalError::IndexMismatch {
                position: 0,
                estimated: 0,
                ground_truth: 5
            })
        );
    }

    #[test]
    fn alignment_removes_a_rigid_offset() {
        let gt: Vec<Pose> = (0..6)
            .map(|i| Pose::from_translation(Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.5 * i as f64)))
            .collect();
        let offset = Pose::new(
            axis_angle(Vector3::new(1.0, 2.0, 0.5), 0.4),
            Vector3::new(3.0, -1.0, 2.0),
        );
        let est = traj(gt.iter().map(|p| offset.compose(p)).collect());
        let aligned = align_trajectory(&est, &traj(gt.clone())).unwrap();
        for p in pose_errors(&aligned, &traj(gt)).unwrap() {
            assert!(p.translation_error < 1e-9 && p.rotation_error < 1e-6);
        }
    }

    #[test]
    fn ate_of_three_values() {
        let s = ate_statistics(&[0.1, 0.2, 0.3]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(s.mean, 0.2) && close(s.median, 0.2));
        assert!(close(s.min, 0.1) && close(s.max, 0.3));
        // hand arithmetic: squares sum to 0.14, squared deviations to 0.02
        assert!(close(s.rmse, (0.14f64 / 3.0).sqrt()));
        assert!(close(s.std, (0.02f64 / 3.0).sqrt()));
        assert!((s.rmse - 0.21602).abs() < 5e-6 && (s.std - 0.08165).abs() < 5e-6);
    }

    #[test]
    fn ate_edge_cases() {
        let z = ate_statistics(&[0.0]).unwrap();
        assert_eq!([z.rmse, z.std, z.mean, z.median, z.min, z.max], [0.0; 6]);
        assert_eq!(ate_statistics(&[]), Err(EvalError::Empty));
        assert_eq!(ate_statistics(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
    }

    #[test]
    fn csv_has_the_fixed_header_and_six_decimals() {
        let s = ate_statistics(&[0.1, 0.2, 0.3]).unwrap();
        let csv = ate_csv(&[("seq1".into(), s)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "seq,rmse,std,mean,median,min,max");
        assert_eq!(lines[1], "seq1,0.216025,0.081650,0.200000,0.200000,0.100000,0.300000");
    }

    #[test]
    fn recall_examples() {
        let zero = PoseErrorPair {
            translation_error: 0.0,
            rotation_error: 0.0,
        };
        assert_eq!(recall_at(&[zero; 4], 0.1, 1.0).unwrap(), 1.0);
        let pairs = [
            PoseErrorPair {
                translation_error: 0.05,
                rotation_error: 0.5,
            },
            PoseErrorPair {
                translation_error: 0.2,
                rotation_error: 0.5,
            },
        ];
        assert_eq!(recall_at(&pairs, 0.1, 1.0).unwrap(), 0.5);
        assert_eq!(recall_at(&[], 0.1, 1.0), Err(EvalError::Empty));
        assert!(matches!(
            recall_at(&pairs, 0.0, 1.0),
            Err(EvalError::InvalidThreshold(..))
        ));
        // strict inequality
        assert_eq!(recall_at(&pairs, 0.05, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn recall_matches_a_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<PoseErrorPair> = (0..1000)
            .map(|_| PoseErrorPair {
                translation_error: rng.random_range(0.0..0.3),
                rotation_error: rng.random_range(0.0..3.0),
            })
            .collect();
        let mut hits = 0usize;
        for p in &pairs {
            let inside = p.translation_error < 0.1 && p.rotation_error < 1.0;
            hits += usize::from(inside);
        }
        assert_eq!(recall_at(&pairs, 0.1, 1.0).unwrap(), hits as f64 / 1000.0);
    }

    #[test]
    fn histogram_examples() {
        let h = error_histogram(&[0.5], &[0.0, 1.0]).unwrap();
        assert_eq!((h.counts, h.overflow), (vec![1], 0));
        let h = error_histogram(&[1.0], &[0.0, 1.0]).unwrap();
        assert_eq!((h.counts, h.overflow), (vec![0], 1));
        let h = error_histogram(&[-0.1, 0.0, f64::NAN], &[0.0, 1.0]).unwrap();
        assert_eq!((h.counts, h.overflow), (vec![1], 2));
        for bad in [&[0.0][..], &[0.0, 0.0], &[1.0, 0.5], &[0.0, f64::NAN]] {
            assert_eq!(error_histogram(&[0.5], bad), Err(EvalError::InvalidEdges));
        }
    }

    #[test]
    fn uniform_values_fill_equal_bins_binomially() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let h = error_histogram(&values, &edges).unwrap();
        // binomial(10^4, 0.1): sd = sqrt(900) = 30
        for c in h.counts {
            assert!((c as f64 - 1000.0).abs() <= 90.0, "{c}");
        }
        assert_eq!(h.overflow, 0);
    }

    #[test]
    fn timing_examples() {
        let one = timing_report(&[trace(10.0, 30.0, 2.0, 6.0)]).unwrap();
        for (s, m) in [
            (one.detect, 10.0),
            (one.matching, 30.0),
            (one.pnp, 2.0),
            (one.render, 6.0),
        ] {
            assert_eq!((s.mean_ms, s.count), (m, 1));
        }
        let two = timing_report(&[trace(10.0, 30.0, 2.0, 6.0), trace(10.0, 30.0, 2.0, 6.0)]).unwrap();
        assert_eq!((two.detect.mean_ms, two.detect.count), (10.0, 2));
        let five = timing_report(&vec![trace(10.0, 30.0, 2.0, 6.0); 5]).unwrap();
        assert!((five.total_s - 0.24).abs() < 1e-12);
        assert_eq!(timing_report(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn timing_skips_stages_that_did_not_run() {
        let mut first = trace(10.0, 30.0, 2.0, 0.0);
        first.timing.render_ms = None;
        let r = timing_report(&[first, trace(20.0, 30.0, 2.0, 6.0)]).unwrap();
        assert_eq!((r.render.mean_ms, r.render.count), (6.0, 1));
        assert_eq!((r.detect.mean_ms, r.detect.count), (15.0, 2));
        let stages = r.detect.total_ms() + r.matching.total_ms() + r.pnp.total_ms() + r.render.total_ms();
        assert!((r.total_s - stages / 1e3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rmse_mean_std_identity(errors in prop::collection::vec(0.0f64..10.0, 1..200)) {
            let s = ate_statistics(&errors).unwrap();
            prop_assert!((s.rmse * s.rmse - (s.mean * s.mean + s.std * s.std)).abs() < 1e-9);
            prop_assert!(s.min <= s.median && s.median <= s.max && s.mean <= s.max + 1e-12);
        }

        #[test]
        fn recall_is_monotone_in_both_thresholds(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..10.0), 1..100),
            t in 0.01f64..1.0, dt in 0.0f64..1.0, r in 0.1f64..10.0, dr in 0.0f64..10.0,
        ) {
            let pairs: Vec<PoseErrorPair> = raw.iter()
                .map(|&(a, b)| PoseErrorPair { translation_error: a, rotation_error: b })
                .collect();
            let base = recall_at(&pairs, t, r).unwrap();
            prop_assert!(recall_at(&pairs, t + dt, r).unwrap() >= base);
            prop_assert!(recall_at(&pairs, t, r + dr).unwrap() >= base);
        }

        #[test]
        fn pose_errors_are_symmetric(
            a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0),
            axis in prop::array::uniform3(-1.0f64..1.0), angle in 0.0f64..3.0,
        ) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let p = Pose::new(axis_angle(axis, angle), Vector3::from(a));
            let q = Pose::from_translation(Vector3::from(b));
            let fwd = pose_errors(&traj(vec![p]), &traj(vec![q])).unwrap()[0];
            let back = pose_errors(&traj(vec![q]), &traj(vec![p])).unwrap()[0];
            prop_assert_eq!(fwd.translation_error, back.translation_error);
            prop_assert!((fwd.rotation_error - back.rotation_error).abs() < 1e-9);
            prop_assert!(fwd.rotation_error >= 0.0 && fwd.rotation_error <= 180.0);
        }

        #[test]
        fn histogram_is_total_preserving_and_order_free(
            mut values in prop::collection::vec(-1.0f64..2.0, 0..200), seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let edges = [0.0, 0.25, 0.5, 1.0];
            let h = error_histogram(&values, &edges).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>() + h.overflow, values.len());
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(error_histogram(&values, &edges).unwrap(), h);
        }
    }
}
