use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix3, Vector2, Vector3, Vector6};

use super::{Correspondence2D3D, PnpError};
use crate::scene::{CameraIntrinsics, Pose};

/// Applies a left-multiplied SE(3) increment `δ = (ω, v)` to the
/// world-to-camera transform of `pose`: `T_cw ← (exp(ω), v) · T_cw`.
/// Takes and returns camera-to-world poses.
pub fn perturb_pose(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w2c = pose.inverse();
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let step = Pose::new(nalgebra::UnitQuaternion::from_scaled_axis(omega), v);
    step.compose(&w2c).inverse()
}

/// World-to-camera rotation and translation, precomputed once per pose.
pub(crate) struct Projector<'a> {
    r: Matrix3<f64>,
    t: Vector3<f64>,
    cam: &'a CameraIntrinsics,
}

impl<'a> Projector<'a> {
    pub(crate) fn new(pose: &Pose, cam: &'a CameraIntrinsics) -> Self {
        let inv = pose.inverse();
        Self {
            r: inv.rotation_matrix(),
            t: *inv.translation(),
            cam,
        }
    }

    #[inline]
    pub(crate) fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.r * world + self.t
    }

    /// Residual `u − π(T⁻¹P)`, or `None` if the point is not in front of
    /// the near plane.
    #[inline]
    pub(crate) fn residual(&self, c: &Correspondence2D3D) -> Option<Vector2<f64>> {
        let p = self.to_camera(&c.world_point);
        (p.z > self.cam.near).then(|| c.pixel - self.cam.project(&p))
    }

    /// Residual and its 2x6 Jacobian with respect to the left perturbation
    /// of [`perturb_pose`].
    #[inline]
    pub(crate) fn residual_and_jacobian(&self, c: &Correspondence2D3D) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
        let p = self.to_camera(&c.world_point);
        if !(p.z > self.cam.near) {
            return None;
        }
        let (fx, fy) = (self.cam.fx, self.cam.fy);
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        let r = c.pixel - self.cam.project(&p);
        // d(pixel)/d(p_cam)
        let a = [fx * iz, 0.0, -fx * p.x * iz2];
        let b = [0.0, fy * iz, -fy * p.y * iz2];
        // d(p_cam)/dδ = [ -[p]x | I ];  residual is negated projection.
        let row = |d: [f64; 3]| {
            let rot = [
                d[1] * -p.z + d[2] * p.y,
                d[0] * p.z + d[2] * -p.x,
                d[0] * -p.y + d[1] * p.x,
            ];
            [-rot[0], -rot[1], -rot[2], -d[0], -d[1], -d[2]]
        };
        let (ra, rb) = (row(a), row(b));
        let jac = Matrix2x6::new(
            ra[0], ra[1], ra[2], ra[3], ra[4], ra[5], rb[0], rb[1], rb[2], rb[3], rb[4], rb[5],
        );
        Some((r, jac))
    }
}

/// Stacked pixel residuals (length 2n) and their 2n×6 Jacobian at `pose`.
pub fn reprojection_residuals(
    corrs: &[Correspondence2D3D],
    cam: &CameraIntrinsics,
    pose: &Pose,
) -> Result<(DVector<f64>, DMatrix<f64>), PnpError> {
    let proj = Projector::new(pose, cam);
    let mut res = DVector::zeros(2 * corrs.len());
    let mut jac = DMatrix::zeros(2 * corrs.len(), 6);
    for (i, c) in corrs.iter().enumerate() {
        let (r, j) = proj
            .residual_and_jacobian(c)
            .ok_or(PnpError::CheiralityViolation { index: i })?;
        res.fixed_rows_mut::<2>(2 * i).copy_from(&r);
        jac.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&j);
    }
    Ok((res, jac))
}
