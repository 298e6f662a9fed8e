//! Run configuration: every flag can also come from a JSON file given with
//! `--config`; flags on the command line win.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsreloc::features::OracleConfig;
use gsreloc::reloc::RelocConfig;
use gsreloc::scene::synthetic::SyntheticConfig;
use gsreloc::CameraIntrinsics;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    #[default]
    Reference,
    Oracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub matches_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Relocalization output directory read by `evaluate`.
    pub results: Option<PathBuf>,
    /// Where to write every reference view used, for external matchers.
    pub export_renders: Option<PathBuf>,
    pub camera: CameraIntrinsics,
    /// Anchor spacing, meters.
    pub spacing: f64,
    pub reloc: RelocConfig,
    pub matcher: MatcherKind,
    pub oracle: OracleConfig,
    pub synthetic: SyntheticConfig,
    /// Synthetic queries written by `synth --queries`.
    pub query_count: usize,
    pub query_offset_m: f64,
    pub query_offset_deg: f64,
    pub seed: u64,
    /// Sequence label in evaluation reports.
    pub seq: String,
    /// Rigidly align estimates onto ground truth before scoring.
    pub align: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            trajectory: None,
            anchors: None,
            queries: None,
            ground_truth: None,
            matches_dir: None,
            output: None,
            results: None,
            export_renders: None,
            camera: CameraIntrinsics::default(),
            spacing: 3.0,
            reloc: RelocConfig::default(),
            matcher: MatcherKind::default(),
            oracle: OracleConfig::default(),
            synthetic: SyntheticConfig::default(),
            query_count: 10,
            query_offset_m: 0.5,
            query_offset_deg: 5.0,
            seed: 0,
            seq: "seq".into(),
            align: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate().context("camera")?;
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            bail!("spacing must be positive, got {}", self.spacing);
        }
        let r = &self.reloc;
        if r.max_iters == 0 {
            bail!("max_iters must be >= 1");
        }
        if !(r.trans_eps > 0.0 && r.rot_eps > 0.0) {
            bail!("trans_eps and rot_eps must be positive");
        }
        if r.min_matches < 6 {
            bail!("min_matches must be >= 6, got {}", r.min_matches);
        }
        let o = &self.oracle;
        if o.n == 0 || !(o.pixel_noise_sigma >= 0.0) || !(0.0..=1.0).contains(&o.outlier_fraction) {
            bail!("oracle needs n >= 1, noise >= 0 and outlier_fraction in [0, 1]");
        }
        if !(self.query_offset_m >= 0.0 && self.query_offset_deg >= 0.0) {
            bail!("query offsets must be non-negative");
        }
        if self.matcher == MatcherKind::External && self.matches_dir.is_none() {
            bail!("--matcher external requires --matches-dir");
        }
        Ok(())
    }
}

/// A path that was set neither on the command line nor in the config file;
/// reported as a usage error.
#[derive(Debug, thiserror::Error)]
#[error("the argument --{flag} <PATH> is required (on the command line or as `{field}` in --config)")]
pub struct MissingArgument {
    pub flag: &'static str,
    pub field: &'static str,
}

pub fn required<'a>(value: &'a Option<PathBuf>, flag: &'static str, field: &'static str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| MissingArgument { flag, field }.into())
}
