use serde::{Deserialize, Serialize};

use super::{FeatureError, Keypoint};
use crate::image::Image;

/// Length of the reference descriptor: 4×4 spatial cells × 8 orientations.
pub const DESCRIPTOR_DIM: usize = 128;

const MIN_IMAGE_SIDE: usize = 32;
const PATCH: usize = 16;
const CELLS: usize = 4;
const BINS: usize = 8;
const CLIP: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub max_keypoints: usize,
    /// Pyramid levels, each half the resolution of the previous one.
    pub levels: usize,
    pub harris_k: f64,
    /// Responses below this fraction of the strongest one are discarded.
    pub relative_threshold: f64,
    /// Keypoints closer than this (level-0 pixels) to a stronger one are
    /// suppressed across scales.
    pub suppression_px: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2048,
            levels: 3,
            harris_k: 0.04,
            relative_threshold: 0.01,
            suppression_px: 3.0,
        }
    }
}

/// Single-channel f64 working image.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.d[y * self.w + x]
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x0 + 1, y0) * fx;
        let bottom = self.at(x0, y0 + 1) * (1.0 - fx) + self.at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut d = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                d.push(0.25 * (self.at(sx, sy) + self.at(sx + 1, sy) + self.at(sx, sy + 1) + self.at(sx + 1, sy + 1)));
            }
        }
        Plane { w, h, d }
    }

    fn blur(&self, sigma: f64) -> Plane {
        let r = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let mut tmp = vec![0.0; self.d.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * self.at(x as isize + i as isize - r, y as isize))
                    .sum();
            }
        }
        let tmp = Plane {
            w: self.w,
            h: self.h,
            d: tmp,
        };
        let mut out = vec![0.0; self.d.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp.at(x as isize, y as isize + i as isize - r))
                    .sum();
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            d: out,
        }
    }

    fn map(&self, f: impl Fn(usize) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            d: (0..self.d.len()).map(f).collect(),
        }
    }
}

struct Candidate {
    level: usize,
    /// Level-local sub-pixel position.
    local: (f64, f64),
    /// Level-0 position.
    position: (f64, f64),
    response: f64,
}

/// Multi-scale Harris corners with 128-dimensional gradient-orientation
/// histogram descriptors, strongest first.
pub fn detect_and_describe(image: &Image, config: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
            min: MIN_IMAGE_SIDE,
        });
    }
    let gray = if image.channels() == 1 {
        image.clone()
    } else {
        image.to_gray()
    };
    let mut level_img = Plane {
        w,
        h,
        d: gray.data().iter().map(|&v| v as f64).collect(),
    };

    let mut grads = Vec::new();
    let mut candidates = Vec::new();
    for level in 0..config.levels.max(1) {
        if level > 0 {
            level_img = level_img.downsample();
        }
        if level_img.w < MIN_IMAGE_SIDE / 2 || level_img.h < MIN_IMAGE_SIDE / 2 {
            break;
        }
        let smooth = level_img.blur(1.0);
        let gx = smooth.map(|i| {
            let (x, y) = ((i % smooth.w) as isize, (i / smooth.w) as isize);
            0.5 * (smooth.at(x + 1, y) - smooth.at(x - 1, y))
        });
        let gy = smooth.map(|i| {
            let (x, y) = ((i % smooth.w) as isize, (i / smooth.w) as isize);
            0.5 * (smooth.at(x, y + 1) - smooth.at(x, y - 1))
        });
        let sxx = gx.map(|i| gx.d[i] * gx.d[i]).blur(1.5);
        let syy = gy.map(|i| gy.d[i] * gy.d[i]).blur(1.5);
        let sxy = gx.map(|i| gx.d[i] * gy.d[i]).blur(1.5);
        // coarser levels see steeper per-pixel gradients; R scales as 16^level
        let norm = 16f64.powi(level as i32);
        let resp = sxx.map(|i| {
            let (a, b, c) = (sxx.d[i], syy.d[i], sxy.d[i]);
            (a * b - c * c - config.harris_k * (a + b) * (a + b)) / norm
        });
        collect_maxima(&resp, level, &mut candidates);
        grads.push((gx, gy));
    }

    let max_resp = candidates.iter().map(|c| c.response).fold(0.0, f64::max);
    if max_resp <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = config.relative_threshold * max_resp;
    candidates.retain(|c| c.response >= floor);
    candidates.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.position.1.total_cmp(&b.position.1))
            .then(a.position.0.total_cmp(&b.position.0))
    });

    let radius = config.suppression_px;
    let cell = radius.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for c in &candidates {
        if out.len() >= config.max_keypoints {
            break;
        }
        let (px, py) = c.position;
        let (gx0, gy0) = ((px / cell) as usize, (py / cell) as usize);
        let crowded = (gy0.saturating_sub(1)..=(gy0 + 1).min(gh - 1)).any(|gy| {
            (gx0.saturating_sub(1)..=(gx0 + 1).min(gw - 1)).any(|gx| {
                grid[gy * gw + gx]
                    .iter()
                    .any(|&(qx, qy)| (qx - px).powi(2) + (qy - py).powi(2) < radius * radius)
            })
        });
        if crowded {
            continue;
        }
        let (gxp, gyp) = &grads[c.level];
        let Some(descriptor) = describe(gxp, gyp, c.local) else {
            continue;
        };
        grid[gy0 * gw + gx0].push((px, py));
        out.push(Keypoint {
            position: nalgebra::Vector2::new(px, py),
            score: (c.response / max_resp).clamp(0.0, 1.0),
            descriptor,
        });
    }
    Ok(out)
}

fn collect_maxima(resp: &Plane, level: usize, out: &mut Vec<Candidate>) {
    // keep the whole descriptor patch inside the level image
    let border = PATCH / 2 + 1;
    if resp.w <= 2 * border || resp.h <= 2 * border {
        return;
    }
    let scale = (1usize << level) as f64;
    for y in border..resp.h - border {
        for x in border..resp.w - border {
            let v = resp.d[y * resp.w + x];
            if v <= 0.0 {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let mut is_max = true;
            'nbr: for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = resp.at(xi + dx, yi + dy);
                    // plateau ties go to the first pixel in scan order
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let offset = |m: f64, p: f64| {
                let denom = 2.0 * (2.0 * v - m - p);
                if denom > 0.0 {
                    ((p - m) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            let ox = offset(resp.at(xi - 1, yi), resp.at(xi + 1, yi));
            let oy = offset(resp.at(xi, yi - 1), resp.at(xi, yi + 1));
            let local = (x as f64 + ox, y as f64 + oy);
            out.push(Candidate {
                level,
                local,
                position: ((local.0 + 0.5) * scale - 0.5, (local.1 + 0.5) * scale - 0.5),
                response: v,
            });
        }
    }
}

/// Gradient-orientation histogram over a 16×16 patch, Gaussian weighted,
/// with linear interpolation between orientation bins. `None` for patches
/// without gradient.
fn describe(gx: &Plane, gy: &Plane, at: (f64, f64)) -> Option<Vec<f32>> {
    let mut hist = [0.0f64; DESCRIPTOR_DIM];
    let half = PATCH as f64 / 2.0;
    let sigma = half;
    let cell = PATCH / CELLS;
    for j in 0..PATCH {
        for i in 0..PATCH {
            let (ox, oy) = (i as f64 - half + 0.5, j as f64 - half + 0.5);
            let (x, y) = (at.0 + ox, at.1 + oy);
            let (dx, dy) = (gx.bilinear(x, y), gy.bilinear(x, y));
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-(ox * ox + oy * oy) / (2.0 * sigma * sigma)).exp() * mag;
            let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
            let pos = angle / std::f64::consts::TAU * BINS as f64;
            let b0 = (pos.floor() as usize) % BINS;
            let frac = pos - pos.floor();
            let base = ((j / cell) * CELLS + i / cell) * BINS;
            hist[base + b0] += weight * (1.0 - frac);
            hist[base + (b0 + 1) % BINS] += weight * frac;
        }
    }
    let normalize = |h: &mut [f64; DESCRIPTOR_DIM]| {
        let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            h.iter_mut().for_each(|v| *v /= n);
            true
        } else {
            false
        }
    };
    if !normalize(&mut hist) {
        return None;
    }
    hist.iter_mut().for_each(|v| *v = v.min(CLIP as f64));
    normalize(&mut hist);
    Some(hist.iter().map(|&v| v as f32).collect())
}
