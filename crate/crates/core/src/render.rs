//! CPU splat rasterizer.
//!
//! Gaussians are projected with the EWA approximation, globally sorted by
//! camera depth, binned into 16x16 tiles, and alpha-composited front to back.
//! Each pixel produces the pre-sky color `C_G`, the accumulated opacity `O_G`
//! and the opacity-weighted expected depth; the final color is
//! `C_G + (1 - O_G) · sky`.

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::image::Image;
use crate::scene::{CameraIntrinsics, Gaussian3D, Pose, SplatScene};

/// Added to the diagonal of every screen-space covariance, px².
pub const COV2D_REGULARIZATION: f64 = 0.3;
/// Compositing stops once the remaining transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Pixels with accumulated opacity below this report depth 0 (sky).
pub const SKY_OPACITY_THRESHOLD: f64 = 0.5;
/// Screen-space support of a splat in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-frame depth of the mean.
    pub z: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// 3 channels in [0, 1].
    pub rgb: Image,
    /// Expected depth in meters, 0 where opacity is below the sky threshold.
    pub depth: Image,
    /// Accumulated opacity `O_G` in [0, 1].
    pub opacity: Image,
}

/// Projects one Gaussian into the camera at `pose` (camera-to-world).
/// Returns `None` when it is culled: mean at or in front of the near plane,
/// or its 3σ ellipse entirely outside the image.
pub fn project_gaussian(g: &Gaussian3D, pose: &Pose, cam: &CameraIntrinsics) -> Option<ProjectedGaussian> {
    let world_to_cam = WorldToCamera::new(pose);
    project_with(g, &world_to_cam, cam)
}

struct WorldToCamera {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl WorldToCamera {
    fn new(pose: &Pose) -> Self {
        let inv = pose.inverse();
        Self {
            r: inv.rotation_matrix(),
            t: *inv.translation(),
        }
    }
}

fn project_with(g: &Gaussian3D, w2c: &WorldToCamera, cam: &CameraIntrinsics) -> Option<ProjectedGaussian> {
    let p = w2c.r * g.mean + w2c.t;
    if !(p.z > cam.near) {
        return None;
    }
    let mean2d = cam.project(&p);

    // Evaluate the Jacobian no further off-axis than 1.3x the field of view;
    // far off-screen splats otherwise blow up.
    let lim_x = 1.3 * cam.cx.max(cam.width as f64 - cam.cx) / cam.fx;
    let lim_y = 1.3 * cam.cy.max(cam.height as f64 - cam.cy) / cam.fy;
    let tx = (p.x / p.z).clamp(-lim_x, lim_x) * p.z;
    let ty = (p.y / p.z).clamp(-lim_y, lim_y) * p.z;
    let z = p.z;
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * tx / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * ty / (z * z),
    );
    let cov_cam = w2c.r * g.covariance() * w2c.r.transpose();
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d = (cov2d + cov2d.transpose()) * 0.5;
    cov2d[(0, 0)] += COV2D_REGULARIZATION;
    cov2d[(1, 1)] += COV2D_REGULARIZATION;

    let ex = EXTENT_SIGMAS * cov2d[(0, 0)].sqrt();
    let ey = EXTENT_SIGMAS * cov2d[(1, 1)].sqrt();
    let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    if mean2d.x + ex < 0.0 || mean2d.x - ex > w || mean2d.y + ey < 0.0 || mean2d.y - ey > h {
        return None;
    }
    Some(ProjectedGaussian {
        mean2d,
        cov2d,
        z,
        opacity: g.opacity,
        color: g.color,
    })
}

/// Front-to-back compositing state for one pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelAccumulator {
    transmittance: f64,
    color: [f64; 3],
    depth: f64,
}

impl Default for PixelAccumulator {
    fn default() -> Self {
        Self {
            transmittance: 1.0,
            color: [0.0; 3],
            depth: 0.0,
        }
    }
}

impl PixelAccumulator {
    /// Blends one contribution behind everything pushed so far. Returns
    /// `false` once the pixel is saturated and further pushes are pointless.
    #[inline]
    pub fn push(&mut self, alpha: f64, color: &[f64; 3], z: f64) -> bool {
        let w = alpha * self.transmittance;
        self.color[0] += color[0] * w;
        self.color[1] += color[1] * w;
        self.color[2] += color[2] * w;
        self.depth += z * w;
        self.transmittance *= 1.0 - alpha;
        self.transmittance >= TRANSMITTANCE_CUTOFF
    }

    /// Accumulated opacity `O_G = 1 - T`.
    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance
    }

    /// Pre-sky composite color `C_G`.
    pub fn color(&self) -> [f64; 3] {
        self.color
    }

    /// Final `(rgb, depth, opacity)` with the sky folded in. Values are
    /// rounded to `f32` here so the depth/opacity threshold is consistent
    /// with what is stored.
    pub fn finish(&self, sky: &[f64; 3]) -> ([f32; 3], f32, f32) {
        let t = self.transmittance;
        let rgb = [
            (self.color[0] + t * sky[0]).clamp(0.0, 1.0) as f32,
            (self.color[1] + t * sky[1]).clamp(0.0, 1.0) as f32,
            (self.color[2] + t * sky[2]).clamp(0.0, 1.0) as f32,
        ];
        let o = self.opacity().clamp(0.0, 1.0);
        let o32 = o as f32;
        let depth = if f64::from(o32) >= SKY_OPACITY_THRESHOLD {
            (self.depth / o) as f32
        } else {
            0.0
        };
        (rgb, depth, o32)
    }
}

struct Splat {
    mean: Vector2<f64>,
    // inverse covariance (a, b; b, c)
    conic: [f64; 3],
    z: f64,
    opacity: f64,
    color: [f64; 3],
    px_min: [usize; 2],
    px_max: [usize; 2],
}

impl Splat {
    fn new(p: &ProjectedGaussian, cam: &CameraIntrinsics) -> Option<Self> {
        let inv = p.cov2d.try_inverse()?;
        let ex = EXTENT_SIGMAS * p.cov2d[(0, 0)].sqrt();
        let ey = EXTENT_SIGMAS * p.cov2d[(1, 1)].sqrt();
        let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64);
        let x0 = clamp((p.mean2d.x - ex).ceil(), cam.width - 1) as usize;
        let x1 = clamp((p.mean2d.x + ex).floor(), cam.width - 1) as usize;
        let y0 = clamp((p.mean2d.y - ey).ceil(), cam.height - 1) as usize;
        let y1 = clamp((p.mean2d.y + ey).floor(), cam.height - 1) as usize;
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some(Self {
            mean: p.mean2d,
            conic: [inv[(0, 0)], 0.5 * (inv[(0, 1)] + inv[(1, 0)]), inv[(1, 1)]],
            z: p.z,
            opacity: p.opacity,
            color: p.color,
            px_min: [x0, y0],
            px_max: [x1, y1],
        })
    }
}

/// Total order used for the front-to-back sort. Depth first; the remaining
/// keys only break exact ties so the result does not depend on input order.
fn depth_order(a: &ProjectedGaussian, b: &ProjectedGaussian) -> Ordering {
    a.z.total_cmp(&b.z)
        .then(a.mean2d.x.total_cmp(&b.mean2d.x))
        .then(a.mean2d.y.total_cmp(&b.mean2d.y))
        .then(a.opacity.total_cmp(&b.opacity))
        .then_with(|| {
            a.cov2d
                .iter()
                .chain(a.color.iter())
                .zip(b.cov2d.iter().chain(b.color.iter()))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Renders the scene from `pose` (camera-to-world).
pub fn render(scene: &SplatScene, pose: &Pose, cam: &CameraIntrinsics) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let w2c = WorldToCamera::new(pose);

    let mut projected: Vec<ProjectedGaussian> = scene
        .gaussians
        .par_iter()
        .filter_map(|g| project_with(g, &w2c, cam))
        .collect();
    projected.par_sort_unstable_by(depth_order);
    let splats: Vec<Splat> = projected.iter().filter_map(|p| Splat::new(p, cam)).collect();

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        for ty in s.px_min[1] / TILE..=s.px_max[1] / TILE {
            for tx in s.px_min[0] / TILE..=s.px_max[0] / TILE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let mut rgb = vec![0f32; w * h * 3];
    let mut depth = vec![0f32; w * h];
    let mut opacity = vec![0f32; w * h];
    let sky = scene.sky_color;

    rgb.par_chunks_mut(w * 3 * TILE)
        .zip(depth.par_chunks_mut(w * TILE))
        .zip(opacity.par_chunks_mut(w * TILE))
        .enumerate()
        .for_each(|(ty, ((rgb_band, depth_band), opac_band))| {
            let rows = depth_band.len() / w;
            for tx in 0..tiles_x {
                let bin = &bins[ty * tiles_x + tx];
                let x_end = ((tx + 1) * TILE).min(w);
                for ry in 0..rows {
                    let y = ty * TILE + ry;
                    for x in tx * TILE..x_end {
                        let acc = shade_pixel(&splats, bin, x, y);
                        let (c, d, o) = acc.finish(&sky);
                        let i = ry * w + x;
                        rgb_band[i * 3..i * 3 + 3].copy_from_slice(&c);
                        depth_band[i] = d;
                        opac_band[i] = o;
                    }
                }
            }
        });

    RenderOutput {
        rgb: Image::from_vec(w, h, 3, rgb),
        depth: Image::from_vec(w, h, 1, depth),
        opacity: Image::from_vec(w, h, 1, opacity),
    }
}

#[inline]
fn shade_pixel(splats: &[Splat], bin: &[u32], x: usize, y: usize) -> PixelAccumulator {
    let mut acc = PixelAccumulator::default();
    let (px, py) = (x as f64, y as f64);
    let max_q = EXTENT_SIGMAS * EXTENT_SIGMAS;
    for &k in bin {
        let s = &splats[k as usize];
        if x < s.px_min[0] || x > s.px_max[0] || y < s.px_min[1] || y > s.px_max[1] {
            continue;
        }
        let dx = px - s.mean.x;
        let dy = py - s.mean.y;
        let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if q > max_q {
            continue;
        }
        let alpha = s.opacity * (-0.5 * q).exp();
        if !acc.push(alpha, &s.color, s.z) {
            break;
        }
    }
    acc
}

/// A rendered reference image together with the pose it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// Camera-to-world.
    pub pose: Pose,
    pub rgb: Image,
    pub depth: Image,
}

impl RenderedView {
    pub fn render(scene: &SplatScene, pose: &Pose, cam: &CameraIntrinsics) -> Self {
        let out = render(scene, pose, cam);
        Self {
            pose: *pose,
            rgb: out.rgb,
            depth: out.depth,
        }
    }

    /// Fraction of pixels with valid (non-sky) depth.
    pub fn valid_depth_fraction(&self) -> f64 {
        let d = self.depth.data();
        d.iter().filter(|&&v| v > 0.0).count() as f64 / d.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 160.0, 120.0, 320, 240, 0.1).unwrap()
    }

    fn gaussian_at(mean: Vector3<f64>, s: f64, opacity: f64, color: [f64; 3]) -> Gaussian3D {
        Gaussian3D::new(mean, UnitQuaternion::identity(), Vector3::new(s, s, s), opacity, color).unwrap()
    }

    #[test]
    fn on_axis_mean_projects_to_principal_point() {
        let g = gaussian_at(Vector3::new(0.0, 0.0, 5.0), 0.1, 0.9, [1.0; 3]);
        let p = project_gaussian(&g, &Pose::identity(), &cam()).unwrap();
        assert_eq!(p.mean2d, Vector2::new(160.0, 120.0));
        assert_eq!(p.z, 5.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = gaussian_at(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.9, [1.0; 3]);
        assert!(project_gaussian(&g, &Pose::identity(), &cam()).is_none());
        let far_off = gaussian_at(Vector3::new(50.0, 0.0, 5.0), 0.1, 0.9, [1.0; 3]);
        assert!(project_gaussian(&far_off, &Pose::identity(), &cam()).is_none());
    }

    #[test]
    fn projected_covariance_matches_monte_carlo() {
        // Oracle: sample the 3D Gaussian, push samples through the exact
        // pinhole projection, and measure the 2D sample covariance.
        let s = 0.2;
        let g = gaussian_at(Vector3::new(0.0, 0.0, 5.0), s, 0.9, [1.0; 3]);
        let cam = cam();
        let p = project_gaussian(&g, &Pose::identity(), &cam).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let d = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ) * s;
            pts.push(cam.project(&(g.mean + d)));
        }
        let mean = pts.iter().fold(Vector2::zeros(), |a, b| a + b) / n as f64;
        let mut cov = Matrix2::zeros();
        for q in &pts {
            let d = q - mean;
            cov += d * d.transpose();
        }
        cov /= n as f64;

        let expected = (cam.fx * s / 5.0).powi(2);
        assert!((expected - 16.0).abs() < 1e-12);
        for i in 0..2 {
            let analytic = p.cov2d[(i, i)];
            assert!((analytic / 16.0 - 1.0).abs() < 0.05, "{analytic}");
            let mc = cov[(i, i)] + COV2D_REGULARIZATION;
            assert!((analytic / mc - 1.0).abs() < 0.05, "{analytic} vs {mc}");
        }
        assert!((p.cov2d[(0, 1)] - p.cov2d[(1, 0)]).abs() < 1e-9);
        assert!(cov[(0, 1)].abs() < 0.05 * 16.0);
    }

    #[test]
    fn empty_scene_is_all_sky() {
        let scene = SplatScene::new(vec![], [0.2, 0.4, 0.6]).unwrap();
        let out = render(&scene, &Pose::identity(), &cam());
        for px in out.rgb.data().chunks_exact(3) {
            assert_eq!(px, &[0.2f32, 0.4, 0.6]);
        }
        assert!(out.opacity.data().iter().all(|&o| o == 0.0));
        assert!(out.depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_gaussian_peaks_at_principal_point_with_true_depth() {
        let g = gaussian_at(Vector3::new(0.0, 0.0, 5.0), 0.05, 0.99, [0.9, 0.1, 0.1]);
        let scene = SplatScene::new(vec![g], [0.0; 3]).unwrap();
        let out = render(&scene, &Pose::identity(), &cam());
        let (argmax, _) = out
            .opacity
            .data()
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        assert_eq!((argmax % 320, argmax / 320), (160, 120));
        assert!((out.depth.get(160, 120, 0) - 5.0).abs() < 1e-2);
    }

    #[test]
    fn saturated_pixel_ignores_sky() {
        let g = gaussian_at(Vector3::new(0.0, 0.0, 5.0), 0.3, 1.0, [0.25, 0.5, 0.75]);
        let scene = SplatScene::new(vec![g], [1.0, 1.0, 1.0]).unwrap();
        let out = render(&scene, &Pose::identity(), &cam());
        assert_eq!(out.opacity.get(160, 120, 0), 1.0);
        assert_eq!(out.rgb.pixel(160, 120), &[0.25f32, 0.5, 0.75]);
    }

    fn random_scene(seed: u64, n: usize, color: Option<[f64; 3]>) -> SplatScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n)
            .map(|_| {
                let mean = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(3.0..8.0),
                );
                let q = crate::scene::synthetic::random_rotation(&mut rng);
                let scale = Vector3::new(
                    rng.random_range(0.05..0.4),
                    rng.random_range(0.05..0.4),
                    rng.random_range(0.05..0.4),
                );
                let c = color.unwrap_or([rng.random(), rng.random(), rng.random()]);
                Gaussian3D::new(mean, q, scale, rng.random_range(0.3..1.0), c).unwrap()
            })
            .collect();
        SplatScene::new(gs, [0.3, 0.6, 0.9]).unwrap()
    }

    #[test]
    fn uniform_color_scene_is_convex_blend_of_color_and_sky() {
        let c = [0.8, 0.2, 0.4];
        let scene = random_scene(5, 300, Some(c));
        let out = render(&scene, &Pose::identity(), &cam());
        for (px, &o) in out.rgb.data().chunks_exact(3).zip(out.opacity.data()) {
            let o = f64::from(o);
            for k in 0..3 {
                let expect = o * c[k] + (1.0 - o) * scene.sky_color[k];
                assert!((f64::from(px[k]) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn depth_is_valid_exactly_where_opacity_clears_threshold() {
        let scene = random_scene(6, 300, None);
        let out = render(&scene, &Pose::identity(), &cam());
        for (&d, &o) in out.depth.data().iter().zip(out.opacity.data()) {
            assert!(d >= 0.0);
            assert_eq!(d > 0.0, f64::from(o) >= SKY_OPACITY_THRESHOLD);
            assert!((0.0..=1.0).contains(&o));
        }
        assert!(out.rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn render_is_invariant_to_gaussian_order() {
        let scene = random_scene(7, 400, None);
        let mut shuffled = scene.clone();
        shuffled.gaussians.reverse();
        shuffled.gaussians.rotate_left(137);
        let a = render(&scene, &Pose::identity(), &cam());
        let b = render(&shuffled, &Pose::identity(), &cam());
        for (x, y) in a.rgb.data().iter().zip(b.rgb.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
        for (x, y) in a.depth.data().iter().zip(b.depth.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn doubling_resolution_scales_opacity_peak() {
        let g = gaussian_at(Vector3::new(0.4, -0.3, 5.0), 0.05, 0.95, [1.0; 3]);
        let scene = SplatScene::new(vec![g], [0.0; 3]).unwrap();
        let peak = |out: &RenderOutput, w: usize| {
            let i = out
                .opacity
                .data()
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            ((i % w) as f64, (i / w) as f64)
        };
        let lo = render(&scene, &Pose::identity(), &cam());
        let hi_cam = cam().scaled(2);
        let hi = render(&scene, &Pose::identity(), &hi_cam);
        let (x1, y1) = peak(&lo, 320);
        let (x2, y2) = peak(&hi, 640);
        assert!((x2 - 2.0 * x1).abs() <= 1.0 && (y2 - 2.0 * y1).abs() <= 1.0);
    }

    #[test]
    fn render_is_deterministic() {
        let scene = random_scene(8, 500, None);
        let a = render(&scene, &Pose::identity(), &cam());
        let b = render(&scene, &Pose::identity(), &cam());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn accumulated_opacity_is_monotone_and_bounded(
            steps in prop::collection::vec((0.0f64..=1.0, 0.1f64..50.0), 1..64)
        ) {
            let mut acc = PixelAccumulator::default();
            let mut prev = acc.opacity();
            for (alpha, z) in steps {
                let more = acc.push(alpha, &[0.5, 0.5, 0.5], z);
                let o = acc.opacity();
                prop_assert!(o >= prev - 1e-15);
                prop_assert!(o <= 1.0 + 1e-6);
                prev = o;
                if !more { break; }
            }
        }
    }
}
