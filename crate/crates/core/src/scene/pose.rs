use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform stored camera-to-world: `transform_point` maps a
/// camera-frame point into the world frame. The quaternion is kept in the
/// hemisphere `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from a rotation matrix, re-orthonormalizing it first.
    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_eps(r, 1e-15, 100, Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = &self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    /// Inverse of [`Pose::to_array`]; the quaternion is renormalized.
    pub fn from_array(a: &[f64; 7]) -> Pose {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(a[0], a[1], a[2], a[3]));
        Pose::new(q, Vector3::new(a[4], a[5], a[6]))
    }

    /// Row-major 3x4 `[R | t]`, the KITTI pose line layout.
    pub fn to_kitti_row(&self) -> [f64; 12] {
        let r = self.rotation_matrix();
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_kitti_row(v: &[f64; 12]) -> Pose {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::from_matrix(&r, Vector3::new(v[3], v[7], v[11]))
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Ok(Pose::from_array(&a))
    }
}

pub(crate) fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Geodesic angle of a rotation in `[0, π]`. Uses `atan2` so small angles keep
/// full precision.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    let v = q.vector().norm();
    2.0 * v.atan2(q.w.abs())
}

/// Camera-center distance (meters) and relative rotation angle (radians)
/// between two poses.
pub fn pose_delta(a: &Pose, b: &Pose) -> (f64, f64) {
    let dt = (a.translation - b.translation).norm();
    // a⁻¹·b written out: exactly zero for a == b and exactly antisymmetric.
    let (qa, qb) = (a.rotation.quaternion(), b.rotation.quaternion());
    let (va, vb) = (qa.vector(), qb.vector());
    let w = qa.w * qb.w + va.dot(&vb);
    let v = vb * qa.w - va * qb.w - va.cross(&vb);
    (dt, 2.0 * v.norm().atan2(w.abs()))
}

/// A rotation of `angle` radians about `axis` (need not be normalized).
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}
