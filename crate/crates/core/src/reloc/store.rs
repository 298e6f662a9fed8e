//! On-disk anchor database: `index.json` plus, per anchor,
//! `anchor_<id>.json` (pose and descriptor), `anchor_<id>.ppm` (8-bit rgb)
//! and `anchor_<id>.depth` (raw f32 meters).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnchorDatabase, AnchorRecord, RelocError};
use crate::image::Image;
use crate::render::RenderedView;
use crate::scene::{CameraIntrinsics, Pose};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    camera: CameraIntrinsics,
    spacing: f64,
    anchors: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct AnchorFile {
    id: u64,
    pose: Pose,
    descriptor: Vec<f64>,
}

fn stem(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("anchor_{id:06}"))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    stem.with_extension(ext)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RelocError + '_ {
    move |source| RelocError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RelocError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RelocError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RelocError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes the database into `dir`, creating it if needed.
pub fn save_anchor_db(db: &AnchorDatabase, dir: &Path) -> Result<(), RelocError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for a in &db.anchors {
        let s = stem(dir, a.id);
        write_json(
            &with_ext(&s, "json"),
            &AnchorFile {
                id: a.id,
                pose: *a.pose(),
                descriptor: a.descriptor.clone(),
            },
        )?;
        let ppm = with_ext(&s, "ppm");
        a.view.rgb.write_ppm(&ppm).map_err(|source| RelocError::Image {
            path: ppm.display().to_string(),
            source,
        })?;
        let depth = with_ext(&s, "depth");
        a.view.depth.write_depth(&depth).map_err(|source| RelocError::Image {
            path: depth.display().to_string(),
            source,
        })?;
    }
    write_json(
        &dir.join("index.json"),
        &IndexFile {
            version: FORMAT_VERSION,
            camera: db.camera,
            spacing: db.spacing,
            anchors: db.anchors.iter().map(|a| a.id).collect(),
        },
    )
}

pub fn load_anchor_db(dir: &Path) -> Result<AnchorDatabase, RelocError> {
    let index_path = dir.join("index.json");
    let index: IndexFile = read_json(&index_path)?;
    if index.version != FORMAT_VERSION {
        return Err(RelocError::Format {
            path: index_path.display().to_string(),
            message: format!("unsupported version {}", index.version),
        });
    }
    index.camera.validate().map_err(|e| RelocError::Format {
        path: index_path.display().to_string(),
        message: e.to_string(),
    })?;

    let mut anchors = Vec::with_capacity(index.anchors.len());
    for &id in &index.anchors {
        let s = stem(dir, id);
        let meta_path = with_ext(&s, "json");
        let meta: AnchorFile = read_json(&meta_path)?;
        if meta.id != id {
            return Err(RelocError::Format {
                path: meta_path.display().to_string(),
                message: format!("holds anchor {} but the index expects {id}", meta.id),
            });
        }
        let ppm = with_ext(&s, "ppm");
        let rgb = Image::read_ppm(&ppm).map_err(|source| RelocError::Image {
            path: ppm.display().to_string(),
            source,
        })?;
        let depth_path = with_ext(&s, "depth");
        let depth = Image::read_depth(&depth_path).map_err(|source| RelocError::Image {
            path: depth_path.display().to_string(),
            source,
        })?;
        anchors.push(AnchorRecord {
            id,
            view: RenderedView {
                pose: meta.pose,
                rgb,
                depth,
            },
            descriptor: meta.descriptor,
        });
    }
    let db = AnchorDatabase {
        camera: index.camera,
        spacing: index.spacing,
        anchors,
    };
    db.validate()?;
    Ok(db)
}
