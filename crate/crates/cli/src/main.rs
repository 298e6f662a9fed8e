// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{MatcherKind, MissingArgument, RunConfig};

#[derive(Parser)]
#[command(
    name = "gsreloc",
    version,
    about = "Monocular relocalization against Gaussian splat maps"
)]
struct Cli {
    /// JSON file with any of the run configuration fields; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene, its trajectory and optional queries.
    Synth(SynthArgs),
    /// Render and store anchor views along a trajectory.
    BuildAnchors(BuildArgs),
    /// Relocalize every query image in a directory.
    Relocalize(RelocArgs),
    /// Score relocalization results against ground truth.
    Evaluate(EvalArgs),
}

#[derive(Args, Default)]
struct CameraArgs {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Gaussians.
    #[arg(long)]
    n: Option<usize>,
    /// Half-width of the Gaussian placement box, meters.
    #[arg(long)]
    extent: Option<f64>,
    /// Number of trajectory poses.
    #[arg(long)]
    length: Option<usize>,
    /// Anchor spacing the trajectory is laid out for, meters.
    #[arg(long)]
    spacing: Option<f64>,
    /// Scene file to write.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Trajectory file to write (default: `<out>` with extension `poses.txt`).
    #[arg(long, value_name = "PATH")]
    trajectory: Option<PathBuf>,
    /// Also render query images and their ground truth into this directory.
    #[arg(long, value_name = "DIR")]
    queries: Option<PathBuf>,
    #[arg(long)]
    query_count: Option<usize>,
    /// Query offset from its anchor pose, meters.
    #[arg(long)]
    query_offset_m: Option<f64>,
    /// Query rotation offset from its anchor pose, degrees.
    #[arg(long)]
    query_offset_deg: Option<f64>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, value_name = "PATH")]
    scene: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    spacing: Option<f64>,
    /// Anchor database directory to write.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct RelocArgs {
    #[arg(long, value_name = "PATH")]
    scene: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    anchors: Option<PathBuf>,
    /// Directory of query images named `<id>.ppm`, id zero-padded to six digits.
    #[arg(long, value_name = "DIR")]
    queries: Option<PathBuf>,
    /// Result directory to write.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    matcher: Option<MatcherKind>,
    /// Directory holding `<id>_iter<k>.matches` files (external matcher).
    #[arg(long, value_name = "DIR")]
    matches_dir: Option<PathBuf>,
    /// Ground-truth poses of the queries, one line per id (oracle matcher).
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    /// Write every reference view as `<id>_iter<k>.ppm` / `.depth`.
    #[arg(long, value_name = "DIR")]
    export_renders: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    trans_eps: Option<f64>,
    #[arg(long)]
    rot_eps: Option<f64>,
    #[arg(long)]
    min_matches: Option<usize>,
    /// Oracle matches per iteration.
    #[arg(long)]
    oracle_n: Option<usize>,
    /// Oracle pixel noise standard deviation.
    #[arg(long)]
    oracle_noise: Option<f64>,
    /// Oracle outlier fraction in [0, 1].
    #[arg(long)]
    oracle_outliers: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Relocalization result directory.
    #[arg(long, value_name = "DIR")]
    results: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    /// Report directory to write.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sequence label for the CSV row.
    #[arg(long)]
    seq: Option<String>,
    /// Rigidly align the estimates onto the ground truth first.
    #[arg(long)]
    align: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl CameraArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let c = &mut cfg.camera;
        set(&mut c.width, self.width);
        set(&mut c.height, self.height);
        set(&mut c.fx, self.fx);
        set(&mut c.fy, self.fy);
        set(&mut c.cx, self.cx);
        set(&mut c.cy, self.cy);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.synthetic.n_gaussians, a.n);
            set(&mut cfg.synthetic.extent, a.extent);
            set(&mut cfg.synthetic.trajectory_length, a.length);
            set(&mut cfg.spacing, a.spacing);
            cfg.synthetic.anchor_spacing = cfg.spacing;
            set_path(&mut cfg.scene, a.out);
            set_path(&mut cfg.trajectory, a.trajectory);
            set_path(&mut cfg.queries, a.queries);
            set(&mut cfg.query_count, a.query_count);
            set(&mut cfg.query_offset_m, a.query_offset_m);
            set(&mut cfg.query_offset_deg, a.query_offset_deg);
            a.camera.apply(&mut cfg);
            cfg.validate()?;
            commands::synth(&cfg)
        }
        Command::BuildAnchors(a) => {
            set_path(&mut cfg.scene, a.scene);
            set_path(&mut cfg.trajectory, a.trajectory);
            set(&mut cfg.spacing, a.spacing);
            set_path(&mut cfg.anchors, a.out);
            a.camera.apply(&mut cfg);
            cfg.validate()?;
            commands::build_anchors(&cfg)
        }
        Command::Relocalize(a) => {
            set_path(&mut cfg.scene, a.scene);
            set_path(&mut cfg.anchors, a.anchors);
            set_path(&mut cfg.queries, a.queries);
            set_path(&mut cfg.output, a.out);
            set(&mut cfg.matcher, a.matcher);
            set_path(&mut cfg.matches_dir, a.matches_dir);
            set_path(&mut cfg.ground_truth, a.ground_truth);
            set_path(&mut cfg.export_renders, a.export_renders);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.reloc.max_iters, a.max_iters);
            set(&mut cfg.reloc.trans_eps, a.trans_eps);
            set(&mut cfg.reloc.rot_eps, a.rot_eps);
            set(&mut cfg.reloc.min_matches, a.min_matches);
            set(&mut cfg.oracle.n, a.oracle_n);
            set(&mut cfg.oracle.pixel_noise_sigma, a.oracle_noise);
            set(&mut cfg.oracle.outlier_fraction, a.oracle_outliers);
            cfg.oracle.seed = cfg.seed;
            cfg.reloc.pnp.ransac.seed = cfg.seed;
            cfg.validate()?;
            commands::relocalize(&cfg)
        }
        Command::Evaluate(a) => {
            set_path(&mut cfg.results, a.results);
            set_path(&mut cfg.ground_truth, a.ground_truth);
            set_path(&mut cfg.output, a.out);
            set(&mut cfg.seq, a.seq);
            cfg.align |= a.align;
            cfg.validate()?;
            commands::evaluate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(missing) = e.downcast_ref::<MissingArgument>() {
                Cli::command()
                    .error(clap::error::ErrorKind::MissingRequiredArgument, missing.to_string())
                    .exit();
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
