use nalgebra::Vector2;
use rayon::prelude::*;

use super::{AnchorDatabase, AnchorRecord, RelocError};
use crate::features::FeatureMatch;
use crate::image::Image;
use crate::pnp::Correspondence2D3D;
use crate::render::RenderedView;
use crate::scene::{CameraIntrinsics, SplatScene, Trajectory};

/// Length of [`global_descriptor`].
pub const GLOBAL_DESCRIPTOR_DIM: usize = 192;
const THUMB: usize = 8;
const ORIENTATION_BINS: usize = 128;
/// Share of the squared descriptor norm given to the thumbnail.
const THUMB_WEIGHT: f64 = 0.65;
/// Slack on the spacing test so that poses exactly `spacing` apart qualify
/// despite rounding.
const SPACING_SLACK: f64 = 1e-9;

/// Renders anchors at trajectory poses, walking the trajectory and taking
/// the first pose, then every pose at least `spacing` meters from the
/// previously taken one. Anchor ids are trajectory indices.
pub fn build_anchor_db(
    scene: &SplatScene,
    trajectory: &Trajectory,
    cam: &CameraIntrinsics,
    spacing: f64,
) -> Result<AnchorDatabase, RelocError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(RelocError::InvalidSpacing(spacing));
    }
    cam.validate().map_err(|e| RelocError::CameraMismatch(e.to_string()))?;
    let length = trajectory.path_length();
    if trajectory.is_empty() || length < spacing {
        return Err(RelocError::TrajectoryTooShort { length, spacing });
    }

    let entries = trajectory.entries();
    let mut selected = vec![entries[0]];
    for &(id, pose) in &entries[1..] {
        let last = selected.last().expect("non-empty").1;
        if (pose.translation() - last.translation()).norm() >= spacing - SPACING_SLACK {
            selected.push((id, pose));
        }
    }

    let anchors: Vec<AnchorRecord> = selected
        .par_iter()
        .map(|&(id, pose)| {
            let mut view = RenderedView::render(scene, &pose, cam);
            // stored anchors are 8-bit, like any image written to disk
            view.rgb = view.rgb.quantize_8bit();
            let descriptor = global_descriptor(&view.rgb);
            AnchorRecord { id, view, descriptor }
        })
        .collect();

    let db = AnchorDatabase {
        camera: *cam,
        spacing,
        anchors,
    };
    db.validate()?;
    Ok(db)
}

/// 192-dimensional whole-image descriptor: an 8×8 smoothed grayscale
/// thumbnail (64) followed by a 128-bin magnitude-weighted gradient
/// orientation histogram. Each part is L2-normalized and weighted so the
/// whole has unit norm. An all-zero image gives the zero vector.
pub fn global_descriptor(image: &Image) -> Vec<f64> {
    let gray = if image.channels() == 1 {
        image.clone()
    } else {
        image.to_gray()
    };
    let (w, h) = (gray.width(), gray.height());
    let px = |x: usize, y: usize| gray.get(x, y, 0) as f64;

    // Tent-weighted cell averages whose support spans two cells each way, so
    // that a content shift of under a cell changes the thumbnail smoothly.
    let tent = |n: usize, cell: usize| -> Vec<f64> {
        let size = n as f64 / THUMB as f64;
        let c = (cell as f64 + 0.5) * size - 0.5;
        (0..n)
            .map(|i| (1.0 - (i as f64 - c).abs() / (2.0 * size)).max(0.0))
            .collect()
    };
    let wx: Vec<Vec<f64>> = (0..THUMB).map(|b| tent(w, b)).collect();
    let wy: Vec<Vec<f64>> = (0..THUMB).map(|b| tent(h, b)).collect();
    let mut thumb = vec![0.0; THUMB * THUMB];
    for by in 0..THUMB {
        for bx in 0..THUMB {
            let (mut sum, mut total) = (0.0, 0.0);
            for (y, &ky) in wy[by].iter().enumerate().filter(|(_, k)| **k > 0.0) {
                for (x, &kx) in wx[bx].iter().enumerate().filter(|(_, k)| **k > 0.0) {
                    sum += kx * ky * px(x, y);
                    total += kx * ky;
                }
            }
            thumb[by * THUMB + bx] = if total > 0.0 { sum / total } else { 0.0 };
        }
    }

    let mut hist = vec![0.0; ORIENTATION_BINS];
    for y in 0..h {
        for x in 0..w {
            let gx = 0.5 * (px((x + 1).min(w - 1), y) - px(x.saturating_sub(1), y));
            let gy = 0.5 * (px(x, (y + 1).min(h - 1)) - px(x, y.saturating_sub(1)));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let a = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let b = ((a / std::f64::consts::TAU * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                hist[b] += mag;
            }
        }
    }

    let normalize = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
    };
    normalize(&mut thumb);
    normalize(&mut hist);
    // the orientation histogram varies little between views of one scene,
    // so the layout part carries more of the similarity
    thumb.iter_mut().for_each(|v| *v *= THUMB_WEIGHT.sqrt());
    hist.iter_mut().for_each(|v| *v *= (1.0 - THUMB_WEIGHT).sqrt());
    let mut d = thumb;
    d.extend(hist);
    normalize(&mut d);
    d
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The anchor whose descriptor has the highest cosine similarity to the
/// query's; ties go to the lowest id.
pub fn retrieve<'a>(query: &Image, db: &'a AnchorDatabase) -> Result<&'a AnchorRecord, RelocError> {
    let q = global_descriptor(query);
    let mut best: Option<(&AnchorRecord, f64)> = None;
    for a in &db.anchors {
        let s = cosine(&q, &a.descriptor);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && a.id < b.id),
        };
        if better {
            best = Some((a, s));
        }
    }
    best.map(|(a, _)| a).ok_or(RelocError::EmptyDatabase)
}

/// Bilinear depth at a sub-pixel position. `None` outside the image, or
/// when any neighbour contributing non-zero weight is sky (depth 0).
pub fn sample_depth(depth: &Image, pixel: &Vector2<f64>) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    if !(pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (w - 1) as f64 && pixel.y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (pixel.x.floor() as usize, pixel.y.floor() as usize);
    let (fx, fy) = (pixel.x - x0 as f64, pixel.y - y0 as f64);
    let mut d = 0.0;
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if wgt == 0.0 {
            continue;
        }
        let v = depth.get(x0 + dx, y0 + dy, 0) as f64;
        if v <= 0.0 {
            return None;
        }
        d += wgt * v;
    }
    (d > 0.0).then_some(d)
}

/// Pairs each query pixel with the world point seen at its reference pixel,
/// back-projected through the reference depth and pose. Matches without
/// valid depth are dropped.
pub fn lift_to_3d(
    matches: &[FeatureMatch],
    reference: &RenderedView,
    cam: &CameraIntrinsics,
) -> Vec<Correspondence2D3D> {
    matches
        .iter()
        .filter_map(|m| {
            let d = sample_depth(&reference.depth, &m.pixel_ref)?;
            let world = reference.pose.transform_point(&cam.back_project(&m.pixel_ref, d));
            Some(Correspondence2D3D::new(m.pixel_query, world))
        })
        .collect()
}
