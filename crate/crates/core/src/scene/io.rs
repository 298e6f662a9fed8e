//! Text formats: the `gsplat v1` scene file and KITTI-style pose files.
//!
//! Scene file layout:
//!
//! ```text
//! gsplat v1 <count>
//! sky <r> <g> <b>          (optional, defaults to black)
//! mx my mz qw qx qy qz sx sy sz opacity r g b
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{Gaussian3D, Pose, SceneError, SplatScene, Trajectory};

const RECORD_FIELDS: usize = 14;

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_splat_file(path: &Path) -> Result<SplatScene, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_splat(&text)
}

pub fn save_splat_file(scene: &SplatScene, path: &Path) -> Result<(), SceneError> {
    fs::write(path, format_splat(scene)).map_err(|e| io_err(path, e))
}

pub(crate) fn format_splat(scene: &SplatScene) -> String {
    let mut out = String::with_capacity(64 + scene.len() * 160);
    let s = scene.sky_color;
    writeln!(out, "gsplat v1 {}", scene.len()).unwrap();
    writeln!(out, "sky {} {} {}", s[0], s[1], s[2]).unwrap();
    for g in &scene.gaussians {
        let q = g.rotation.quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            g.mean.x,
            g.mean.y,
            g.mean.z,
            q.w,
            q.i,
            q.j,
            q.k,
            g.scale.x,
            g.scale.y,
            g.scale.z,
            g.opacity,
            g.color[0],
            g.color[1],
            g.color[2]
        )
        .unwrap();
    }
    out
}

pub(crate) fn parse_splat(text: &str) -> Result<SplatScene, SceneError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .peekable();

    let header = lines
        .next()
        .ok_or_else(|| SceneError::MalformedHeader("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let declared = match parts.as_slice() {
        ["gsplat", "v1", n] => n
            .parse::<usize>()
            .map_err(|_| SceneError::MalformedHeader(format!("bad record count {n:?}")))?,
        _ => {
            return Err(SceneError::MalformedHeader(format!(
                "expected `gsplat v1 <count>`, got {header:?}"
            )))
        }
    };

    let mut sky = [0.0; 3];
    if let Some(line) = lines.peek() {
        if line.starts_with("sky") {
            let vals: Vec<&str> = line.split_whitespace().skip(1).collect();
            if vals.len() != 3 {
                return Err(SceneError::MalformedHeader("sky line needs three values".into()));
            }
            for (dst, v) in sky.iter_mut().zip(vals) {
                *dst = v
                    .parse()
                    .map_err(|_| SceneError::MalformedHeader(format!("bad sky value {v:?}")))?;
            }
            lines.next();
        }
    }

    let mut gaussians = Vec::with_capacity(declared);
    for (record, line) in lines.enumerate() {
        gaussians.push(parse_record(record, line)?);
    }
    if gaussians.len() != declared {
        return Err(SceneError::CountMismatch {
            declared,
            found: gaussians.len(),
        });
    }
    SplatScene::new(gaussians, sky)
}

fn parse_record(record: usize, line: &str) -> Result<Gaussian3D, SceneError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != RECORD_FIELDS {
        return Err(SceneError::FieldCount {
            record,
            expected: RECORD_FIELDS,
            found: fields.len(),
        });
    }
    let mut v = [0.0f64; RECORD_FIELDS];
    for (field, (dst, text)) in v.iter_mut().zip(&fields).enumerate() {
        *dst = text.parse().map_err(|_| SceneError::Parse {
            record,
            field,
            text: text.to_string(),
        })?;
        if !dst.is_finite() {
            return Err(SceneError::NonFinite { record, field });
        }
    }

    let q = Quaternion::new(v[3], v[4], v[5], v[6]);
    let norm = q.norm();
    // Tolerate rounding from tools that print few decimals, then renormalize.
    if (norm - 1.0).abs() > 1e-3 {
        return Err(SceneError::NonUnitQuaternion { record, norm });
    }
    let g = Gaussian3D {
        mean: Vector3::new(v[0], v[1], v[2]),
        rotation: super::pose::canonical(UnitQuaternion::from_quaternion(q)),
        scale: Vector3::new(v[7], v[8], v[9]),
        opacity: v[10],
        color: [v[11], v[12], v[13]],
    };
    g.validate(record)?;
    Ok(g)
}

/// One pose per line as the 12 row-major entries of the camera-to-world
/// `[R | t]`. Frame indices are the 0-based line numbers.
pub fn load_kitti_poses(path: &Path) -> Result<Trajectory, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_kitti(&text)
}

pub fn save_kitti_poses(traj: &Trajectory, path: &Path) -> Result<(), SceneError> {
    fs::write(path, format_kitti(traj)).map_err(|e| io_err(path, e))
}

pub(crate) fn format_kitti(traj: &Trajectory) -> String {
    let mut out = String::new();
    for pose in traj.poses() {
        let row = pose.to_kitti_row();
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub(crate) fn parse_kitti(text: &str) -> Result<Trajectory, SceneError> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let vals =
            vals.map_err(|_| SceneError::InvalidTrajectory(format!("line {}: unparseable number", lineno + 1)))?;
        let row: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| {
            SceneError::InvalidTrajectory(format!("line {}: expected 12 values, found {}", lineno + 1, v.len()))
        })?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::InvalidTrajectory(format!(
                "line {}: non-finite value",
                lineno + 1
            )));
        }
        poses.push(Pose::from_kitti_row(&row));
    }
    Ok(Trajectory::from_poses(poses))
}
