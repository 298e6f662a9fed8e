use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsreloc::eval::{
    align_trajectory, ate_csv, ate_statistics, error_histogram, pose_errors, recall_at, recall_curve,
    timing_report_from_times, AteStats, Histogram, PoseErrorPair, RecallPoint,
};
use gsreloc::features::{ExternalMatcher, Matcher, OracleMatcher, ReferenceMatcher};
use gsreloc::reloc::{
    build_anchor_db, load_anchor_db, relocalize_observed, save_anchor_db, Query, RelocStatus, RelocalizationResult,
    TimingRecord,
};
use gsreloc::render::RenderedView;
use gsreloc::scene::synthetic::perturb_pose;
use gsreloc::scene::{generate_synthetic_scene, load_kitti_poses, load_splat_file, save_kitti_poses, save_splat_file};
use gsreloc::{Image, Pose, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{required, MatcherKind, RunConfig};

/// Translation / rotation thresholds of the recall sweep (meters, degrees).
const RECALL_SWEEP: [(f64, f64); 7] = [
    (0.01, 0.1),
    (0.02, 0.2),
    (0.05, 0.5),
    (0.10, 1.0),
    (0.25, 2.0),
    (0.50, 5.0),
    (1.00, 10.0),
];
const TRANSLATION_EDGES: [f64; 9] = [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
const ROTATION_EDGES_DEG: [f64; 9] = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0];

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn query_file_name(id: u64) -> String {
    format!("{id:06}.ppm")
}

/// Trajectory poses taken by the same spacing rule as the anchor builder.
fn anchor_poses(traj: &Trajectory, spacing: f64) -> Vec<Pose> {
    let mut out: Vec<Pose> = Vec::new();
    for pose in traj.poses() {
        match out.last() {
            Some(last) if (pose.translation() - last.translation()).norm() < spacing - 1e-9 => {}
            _ => out.push(*pose),
        }
    }
    out
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let scene_path = required(&cfg.scene, "out", "scene")?;
    let traj_path = cfg
        .trajectory
        .clone()
        .unwrap_or_else(|| scene_path.with_extension("poses.txt"));
    let (scene, traj) = generate_synthetic_scene(cfg.seed, &cfg.synthetic)?;
    create_parent(scene_path)?;
    create_parent(&traj_path)?;
    save_splat_file(&scene, scene_path)?;
    save_kitti_poses(&traj, &traj_path)?;
    println!(
        "wrote {} Gaussians to {} and {} poses to {}",
        scene.len(),
        scene_path.display(),
        traj.len(),
        traj_path.display()
    );

    if let Some(dir) = &cfg.queries {
        create_dir(dir)?;
        let bases = anchor_poses(&traj, cfg.spacing);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let poses: Vec<Pose> = (0..cfg.query_count)
            .map(|i| {
                perturb_pose(
                    &bases[i % bases.len()],
                    cfg.query_offset_m,
                    cfg.query_offset_deg.to_radians(),
                    &mut rng,
                )
            })
            .collect();
        poses.par_iter().enumerate().try_for_each(|(i, pose)| -> Result<()> {
            let image = RenderedView::render(&scene, pose, &cfg.camera).rgb;
            let path = dir.join(query_file_name(i as u64));
            image
                .write_ppm(&path)
                .with_context(|| format!("writing {}", path.display()))
        })?;
        save_kitti_poses(&Trajectory::from_poses(poses), &dir.join("poses.txt"))?;
        println!("wrote {} queries to {}", cfg.query_count, dir.display());
    }
    Ok(())
}

pub fn build_anchors(cfg: &RunConfig) -> Result<()> {
    let scene_path = required(&cfg.scene, "scene", "scene")?;
    let traj_path = required(&cfg.trajectory, "trajectory", "trajectory")?;
    let out = required(&cfg.anchors, "out", "anchors")?;
    let scene = load_splat_file(scene_path).with_context(|| format!("loading {}", scene_path.display()))?;
    let traj = load_kitti_poses(traj_path).with_context(|| format!("loading {}", traj_path.display()))?;
    let db = build_anchor_db(&scene, &traj, &cfg.camera, cfg.spacing)?;
    save_anchor_db(&db, out)?;
    println!("wrote {} anchors to {}", db.anchors.len(), out.display());
    Ok(())
}

/// Queries in `dir`, by id.
fn list_queries(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let (Some(stem), Some(ext)) = (path.file_stem().and_then(|s| s.to_str()), path.extension()) else {
            continue;
        };
        if ext == "ppm" && stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
            out.push((stem.parse()?, path));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no query images (<6-digit id>.ppm) in {}", dir.display());
    }
    Ok(out)
}

/// Written in place of a result when a query could not be processed at all.
#[derive(Serialize)]
struct QueryFailure<'a> {
    query_id: u64,
    status: RelocStatus,
    error: &'a str,
}

pub fn relocalize(cfg: &RunConfig) -> Result<()> {
    let scene_path = required(&cfg.scene, "scene", "scene")?;
    let anchors_dir = required(&cfg.anchors, "anchors", "anchors")?;
    let queries_dir = required(&cfg.queries, "queries", "queries")?;
    let out = required(&cfg.output, "out", "output")?;

    let scene = load_splat_file(scene_path).with_context(|| format!("loading {}", scene_path.display()))?;
    let db = load_anchor_db(anchors_dir)?;
    let cam = db.camera;
    let queries = list_queries(queries_dir)?;
    let ground_truth = match &cfg.ground_truth {
        Some(p) => Some(load_kitti_poses(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let matcher: Box<dyn Matcher> = match cfg.matcher {
        MatcherKind::Reference => Box::new(ReferenceMatcher::default()),
        MatcherKind::Oracle => Box::new(OracleMatcher { config: cfg.oracle }),
        MatcherKind::External => Box::new(ExternalMatcher {
            dir: required(&cfg.matches_dir, "matches-dir", "matches_dir")?.to_path_buf(),
        }),
    };
    create_dir(out)?;
    if let Some(dir) = &cfg.export_renders {
        create_dir(dir)?;
    }

    let outcomes: Vec<Result<RelocStatus>> = queries
        .par_iter()
        .map(|(id, path)| {
            let outcome = run_query(
                cfg,
                *id,
                path,
                &scene,
                &db,
                &cam,
                ground_truth.as_ref(),
                matcher.as_ref(),
            );
            let json_path = out.join(format!("{id:06}.json"));
            match outcome {
                Ok(result) => {
                    write_text(&json_path, &(result.to_json() + "\n"))?;
                    let timing = serde_json::to_string_pretty(&result.timing_record())?;
                    write_text(&out.join(format!("{id:06}.timing.json")), &(timing + "\n"))?;
                    if let Some(e) = &result.error {
                        eprintln!("query {id:06}: {e}");
                    }
                    Ok(result.status)
                }
                Err(e) => {
                    let error = format!("{e:#}");
                    eprintln!("query {id:06}: {error}");
                    let failure = QueryFailure {
                        query_id: *id,
                        status: RelocStatus::Failed,
                        error: &error,
                    };
                    write_text(&json_path, &(serde_json::to_string_pretty(&failure)? + "\n"))?;
                    Ok(RelocStatus::Failed)
                }
            }
        })
        .collect();

    let mut counts = [0usize; 3];
    for o in outcomes {
        counts[o? as usize] += 1;
    }
    println!(
        "relocalized {} queries: {} converged, {} max_iterations, {} failed",
        queries.len(),
        counts[RelocStatus::Converged as usize],
        counts[RelocStatus::MaxIterations as usize],
        counts[RelocStatus::Failed as usize]
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_query(
    cfg: &RunConfig,
    id: u64,
    path: &Path,
    scene: &gsreloc::SplatScene,
    db: &gsreloc::reloc::AnchorDatabase,
    cam: &gsreloc::CameraIntrinsics,
    ground_truth: Option<&Trajectory>,
    matcher: &dyn Matcher,
) -> Result<RelocalizationResult> {
    let image = Image::read_ppm(path).with_context(|| format!("reading {}", path.display()))?;
    let query = Query {
        id,
        image: &image,
        pose_gt: ground_truth.and_then(|t| t.get(id)),
    };
    let mut export_error = None;
    let mut observe = |iteration: usize, view: &RenderedView| {
        let Some(dir) = &cfg.export_renders else { return };
        let stem = dir.join(format!("{id:06}_iter{iteration}"));
        let written = view
            .rgb
            .write_ppm(&stem.with_extension("ppm"))
            .and_then(|_| view.depth.write_depth(&stem.with_extension("depth")));
        if let Err(e) = written {
            export_error.get_or_insert(e);
        }
    };
    let result = relocalize_observed(&query, db, scene, cam, matcher, &cfg.reloc, &mut observe)?;
    if let Some(e) = export_error {
        return Err(e).context("exporting reference renders");
    }
    Ok(result)
}

/// The parts of a result file `evaluate` needs; failure records lack a pose.
#[derive(Deserialize)]
struct ResultSummary {
    query_id: u64,
    status: RelocStatus,
    pose: Option<Pose>,
}

#[derive(Serialize)]
struct StatusCounts {
    converged: usize,
    max_iterations: usize,
    failed: usize,
}

#[derive(Serialize)]
struct QueryError {
    query_id: u64,
    #[serde(flatten)]
    error: PoseErrorPair,
}

#[derive(Serialize)]
struct EvaluationReport {
    seq: String,
    queries: usize,
    /// Queries without a pose count as misses in every recall value.
    without_pose: usize,
    status: StatusCounts,
    aligned: bool,
    ate: AteStats,
    rotation_deg: AteStats,
    recall_10cm_1deg: f64,
    recall_curve: Vec<RecallPoint>,
    translation_histogram: Histogram,
    rotation_histogram_deg: Histogram,
    per_query: Vec<QueryError>,
}

fn read_results(dir: &Path) -> Result<(Vec<ResultSummary>, Vec<TimingRecord>)> {
    let mut results = Vec::new();
    let mut timings = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    for path in paths {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let parse_err = || format!("parsing {}", path.display());
        if name.ends_with(".timing.json") {
            timings.push(serde_json::from_str(&std::fs::read_to_string(&path)?).with_context(parse_err)?);
        } else if name.ends_with(".json") {
            results
                .push(serde_json::from_str::<ResultSummary>(&std::fs::read_to_string(&path)?).with_context(parse_err)?);
        }
    }
    if results.is_empty() {
        bail!("no result files in {}", dir.display());
    }
    results.sort_by_key(|r| r.query_id);
    Ok((results, timings))
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let results_dir = required(&cfg.results, "results", "results")?;
    let gt_path = required(&cfg.ground_truth, "ground-truth", "ground_truth")?;
    let out = required(&cfg.output, "out", "output")?;
    let gt = load_kitti_poses(gt_path).with_context(|| format!("loading {}", gt_path.display()))?;
    let (results, timings) = read_results(results_dir)?;

    let mut status = StatusCounts {
        converged: 0,
        max_iterations: 0,
        failed: 0,
    };
    let mut est_entries = Vec::new();
    let mut gt_entries = Vec::new();
    for r in &results {
        let truth = gt
            .get(r.query_id)
            .with_context(|| format!("no ground-truth pose for query {} in {}", r.query_id, gt_path.display()))?;
        match r.status {
            RelocStatus::Converged => status.converged += 1,
            RelocStatus::MaxIterations => status.max_iterations += 1,
            RelocStatus::Failed => status.failed += 1,
        }
        if let Some(pose) = r.pose {
            est_entries.push((r.query_id, pose));
            gt_entries.push((r.query_id, *truth));
        }
    }
    if est_entries.is_empty() {
        bail!("no result in {} has a pose", results_dir.display());
    }
    let without_pose = results.len() - est_entries.len();
    let est = Trajectory::new(est_entries)?;
    let gt_sub = Trajectory::new(gt_entries)?;
    let est = if cfg.align {
        align_trajectory(&est, &gt_sub)?
    } else {
        est
    };
    let pairs = pose_errors(&est, &gt_sub)?;

    let trans: Vec<f64> = pairs.iter().map(|p| p.translation_error).collect();
    let rot: Vec<f64> = pairs.iter().map(|p| p.rotation_error).collect();
    let miss = PoseErrorPair {
        translation_error: f64::INFINITY,
        rotation_error: f64::INFINITY,
    };
    let mut all_pairs = pairs.clone();
    all_pairs.extend(std::iter::repeat_n(miss, without_pose));
    let ate = ate_statistics(&trans)?;

    let report = EvaluationReport {
        seq: cfg.seq.clone(),
        queries: results.len(),
        without_pose,
        status,
        aligned: cfg.align,
        ate,
        rotation_deg: ate_statistics(&rot)?,
        recall_10cm_1deg: recall_at(&all_pairs, 0.1, 1.0)?,
        recall_curve: recall_curve(&all_pairs, &RECALL_SWEEP)?,
        translation_histogram: error_histogram(&trans, &TRANSLATION_EDGES)?,
        rotation_histogram_deg: error_histogram(&rot, &ROTATION_EDGES_DEG)?,
        per_query: est
            .entries()
            .iter()
            .zip(&pairs)
            .map(|((id, _), e)| QueryError {
                query_id: *id,
                error: *e,
            })
            .collect(),
    };

    create_dir(out)?;
    let csv = ate_csv(&[(cfg.seq.clone(), ate)]);
    write_text(&out.join("ate.csv"), &csv)?;
    write_text(
        &out.join("report.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    let times: Vec<_> = timings.iter().flat_map(|t| t.iterations.iter().copied()).collect();
    if !times.is_empty() {
        let timing = timing_report_from_times(&times)?;
        write_text(
            &out.join("timing.json"),
            &(serde_json::to_string_pretty(&timing)? + "\n"),
        )?;
    }

    print!("{csv}");
    println!(
        "recall@(0.10 m, 1 deg) = {:.4} over {} queries",
        report.recall_10cm_1deg, report.queries
    );
    let by_status: BTreeMap<&str, usize> = [
        ("converged", report.status.converged),
        ("max_iterations", report.status.max_iterations),
        ("failed", report.status.failed),
    ]
    .into();
    println!("status {by_status:?}");
    Ok(())
}
