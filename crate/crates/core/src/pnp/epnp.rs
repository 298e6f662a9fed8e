//! EPnP: express every world point as a barycentric combination of four
//! control points, solve the camera-frame control points from the null
//! space of the 2n×12 projection system, then recover the rigid transform
//! with a closed-form absolute orientation.

use nalgebra::{SMatrix, SVector, SymmetricEigen, Vector3, Vector4};

use super::control::{compute_control_points, ControlPointSet};
use super::residuals::Projector;
use super::umeyama::umeyama_align;
use super::{Correspondence2D3D, PnpError, SolverReport, MIN_CORRESPONDENCES};
use crate::scene::{CameraIntrinsics, Pose};

type Mat12 = SMatrix<f64, 12, 12>;
type Vec12 = SVector<f64, 12>;
type Mat6x10 = SMatrix<f64, 6, 10>;
type Vec6 = SVector<f64, 6>;

const GAUSS_NEWTON_ITERS: usize = 10;

/// The six control-point pairs whose squared distances the solution must
/// preserve.
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Solves the pose of a calibrated camera from ≥ 6 correspondences in
/// general (non-coplanar) position. The returned pose is camera-to-world.
pub fn epnp(corrs: &[Correspondence2D3D], cam: &CameraIntrinsics) -> Result<SolverReport, PnpError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::InsufficientMatches {
            needed: MIN_CORRESPONDENCES,
            got: corrs.len(),
        });
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world_point).collect();
    let ctrl = compute_control_points(&world)?;

    // Normal matrix MᵀM of the projection system, built in normalized image
    // coordinates so the conditioning does not depend on the focal length.
    let mut mtm = Mat12::zeros();
    for (c, a) in corrs.iter().zip(&ctrl.weights) {
        let x = (c.pixel.x - cam.cx) / cam.fx;
        let y = (c.pixel.y - cam.cy) / cam.fy;
        let mut r1 = Vec12::zeros();
        let mut r2 = Vec12::zeros();
        for j in 0..4 {
            r1[3 * j] = a[j];
            r1[3 * j + 2] = -a[j] * x;
            r2[3 * j + 1] = a[j];
            r2[3 * j + 2] = -a[j] * y;
        }
        mtm += r1 * r1.transpose() + r2 * r2.transpose();
    }

    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // kernel[k]: eigenvector of the (k+1)-th smallest eigenvalue
    let kernel: [Vec12; 4] = std::array::from_fn(|k| eig.eigenvectors.column(order[k]).into_owned());

    let (l, rho) = distance_system(&kernel, &ctrl);

    let candidates = [
        betas_kernel_1(&l, &rho),
        betas_kernel_2(&l, &rho),
        betas_kernel_3(&l, &rho),
    ];

    let mut best: Option<(Pose, f64)> = None;
    for betas in candidates.into_iter().flatten() {
        let betas = refine_betas(&l, &rho, betas);
        if let Some((pose, err)) = pose_from_betas(&betas, &kernel, &ctrl, corrs, &world, cam) {
            if best.as_ref().is_none_or(|(_, e)| err < *e) {
                best = Some((pose, err));
            }
        }
    }

    let (pose, err) = best.ok_or(PnpError::NoPositiveDepth)?;
    Ok(SolverReport {
        pose,
        inlier_count: corrs.len(),
        mean_reprojection_error: err,
        iterations: GAUSS_NEWTON_ITERS,
        converged: true,
    })
}

fn control_block(v: &Vec12, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

/// Rows express `‖C_a − C_b‖²` of the camera-frame control points as a
/// linear function of the ten products
/// `[β11, β12, β22, β13, β23, β33, β14, β24, β34, β44]`; `rho` holds the
/// same distances in the world frame.
fn distance_system(kernel: &[Vec12; 4], ctrl: &ControlPointSet) -> (Mat6x10, Vec6) {
    let mut l = Mat6x10::zeros();
    let mut rho = Vec6::zeros();
    for (row, &(a, b)) in PAIRS.iter().enumerate() {
        let dv: [Vector3<f64>; 4] =
            std::array::from_fn(|k| control_block(&kernel[k], a) - control_block(&kernel[k], b));
        let vals = [
            dv[0].dot(&dv[0]),
            2.0 * dv[0].dot(&dv[1]),
            dv[1].dot(&dv[1]),
            2.0 * dv[0].dot(&dv[2]),
            2.0 * dv[1].dot(&dv[2]),
            dv[2].dot(&dv[2]),
            2.0 * dv[0].dot(&dv[3]),
            2.0 * dv[1].dot(&dv[3]),
            2.0 * dv[2].dot(&dv[3]),
            dv[3].dot(&dv[3]),
        ];
        for (k, v) in vals.into_iter().enumerate() {
            l[(row, k)] = v;
        }
        rho[row] = (ctrl.points[a] - ctrl.points[b]).norm_squared();
    }
    (l, rho)
}

/// Least-squares solve of the 6×k subsystem picked by `cols`.
fn solve_columns<const K: usize>(l: &Mat6x10, rho: &Vec6, cols: [usize; K]) -> Option<SVector<f64, K>>
where
    nalgebra::Const<K>: nalgebra::DimMin<nalgebra::Const<K>, Output = nalgebra::Const<K>>,
{
    let sub = SMatrix::<f64, 6, K>::from_fn(|r, c| l[(r, cols[c])]);
    let ata = sub.transpose() * sub;
    let atb = sub.transpose() * rho;
    ata.cholesky().map(|ch| ch.solve(&atb))
}

/// Single kernel vector: `β²` is the scale fitting all six distances.
fn betas_kernel_1(l: &Mat6x10, rho: &Vec6) -> Option<Vector4<f64>> {
    let col = l.column(0);
    let denom = col.dot(&col);
    if denom <= 0.0 {
        return None;
    }
    let b11 = col.dot(rho) / denom;
    (b11 > 0.0).then(|| Vector4::new(b11.sqrt(), 0.0, 0.0, 0.0))
}

/// Two kernel vectors, linearized over `[β11, β12, β22]`.
fn betas_kernel_2(l: &Mat6x10, rho: &Vec6) -> Option<Vector4<f64>> {
    let b = solve_columns(l, rho, [0, 1, 2])?;
    let (mut b1, b2);
    if b[0] < 0.0 {
        b1 = (-b[0]).sqrt();
        b2 = if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 };
    } else {
        b1 = b[0].sqrt();
        b2 = if b[2] > 0.0 { b[2].sqrt() } else { 0.0 };
    }
    if b[1] < 0.0 {
        b1 = -b1;
    }
    Some(Vector4::new(b1, b2, 0.0, 0.0))
}

/// Three kernel vectors, linearized over `[β11, β12, β22, β13, β23]`.
fn betas_kernel_3(l: &Mat6x10, rho: &Vec6) -> Option<Vector4<f64>> {
    let b = solve_columns(l, rho, [0, 1, 2, 3, 4])?;
    let (mut b1, b2);
    if b[0] < 0.0 {
        b1 = (-b[0]).sqrt();
        b2 = if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 };
    } else {
        b1 = b[0].sqrt();
        b2 = if b[2] > 0.0 { b[2].sqrt() } else { 0.0 };
    }
    if b[1] < 0.0 {
        b1 = -b1;
    }
    if b1 == 0.0 {
        return None;
    }
    let b3 = b[3] / b1;
    Some(Vector4::new(b1, b2, b3, 0.0))
}

/// Gauss–Newton on the distance-preservation residuals
/// `ρ − L·products(β)` over all four betas.
fn refine_betas(l: &Mat6x10, rho: &Vec6, mut beta: Vector4<f64>) -> Vector4<f64> {
    for _ in 0..GAUSS_NEWTON_ITERS {
        let b = beta;
        let products = SVector::<f64, 10>::from_column_slice(&[
            b[0] * b[0],
            b[0] * b[1],
            b[1] * b[1],
            b[0] * b[2],
            b[1] * b[2],
            b[2] * b[2],
            b[0] * b[3],
            b[1] * b[3],
            b[2] * b[3],
            b[3] * b[3],
        ]);
        let residual = rho - l * products;
        let mut jac = SMatrix::<f64, 6, 4>::zeros();
        for r in 0..6 {
            let q = |k| l[(r, k)];
            jac[(r, 0)] = 2.0 * q(0) * b[0] + q(1) * b[1] + q(3) * b[2] + q(6) * b[3];
            jac[(r, 1)] = q(1) * b[0] + 2.0 * q(2) * b[1] + q(4) * b[2] + q(7) * b[3];
            jac[(r, 2)] = q(3) * b[0] + q(4) * b[1] + 2.0 * q(5) * b[2] + q(8) * b[3];
            jac[(r, 3)] = q(6) * b[0] + q(7) * b[1] + q(8) * b[2] + 2.0 * q(9) * b[3];
        }
        // 6x4 least squares through QR keeps the small system well conditioned
        let qr = jac.qr();
        let qtr = qr.q().transpose() * residual;
        let Some(step) = qr.r().solve_upper_triangular(&qtr) else {
            break;
        };
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        beta += step;
        if step.norm() <= 1e-15 * beta.norm().max(1.0) {
            break;
        }
    }
    beta
}

fn pose_from_betas(
    betas: &Vector4<f64>,
    kernel: &[Vec12; 4],
    ctrl: &ControlPointSet,
    corrs: &[Correspondence2D3D],
    world: &[Vector3<f64>],
    cam: &CameraIntrinsics,
) -> Option<(Pose, f64)> {
    let combined: Vec12 = kernel
        .iter()
        .zip(betas.iter())
        .fold(Vec12::zeros(), |acc, (v, b)| acc + v * *b);
    let mut ctrl_cam: [Vector3<f64>; 4] = std::array::from_fn(|j| control_block(&combined, j));
    let mut cam_pts: Vec<Vector3<f64>> = ctrl
        .weights
        .iter()
        .map(|a| ControlPointSet::combine(a, &ctrl_cam))
        .collect();

    let negative = cam_pts.iter().filter(|p| p.z < 0.0).count();
    if 2 * negative > cam_pts.len() {
        for c in ctrl_cam.iter_mut() {
            *c = -*c;
        }
        for p in cam_pts.iter_mut() {
            *p = -*p;
        }
    }
    if 2 * cam_pts.iter().filter(|p| p.z > 0.0).count() <= cam_pts.len() {
        return None;
    }

    let world_to_cam = umeyama_align(world, &cam_pts).ok()?;
    let pose = world_to_cam.inverse();
    if !pose.to_array().iter().all(|v| v.is_finite()) {
        return None;
    }
    let proj = Projector::new(&pose, cam);
    let err = corrs
        .iter()
        .map(|c| {
            let p = proj.to_camera(&c.world_point);
            (c.pixel - cam.project(&p)).norm()
        })
        .sum::<f64>()
        / corrs.len() as f64;
    err.is_finite().then_some((pose, err))
}
