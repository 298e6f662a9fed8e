use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::PnpError;
use crate::scene::Pose;

/// Closed-form rigid alignment (rotation + translation, unit scale) that
/// maps `a` onto `b` in the least-squares sense: the returned pose `T`
/// minimizes `Σ‖b_i − T·a_i‖²` with `det(R) = +1`.
pub fn umeyama_align(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Pose, PnpError> {
    if a.len() != b.len() {
        return Err(PnpError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(PnpError::InsufficientMatches {
            needed: 3,
            got: a.len(),
        });
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        h += (pb - cb) * (pa - ca).transpose();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(PnpError::Degenerate("SVD failed")),
    };
    let s = svd.singular_values;
    let (mut smallest, mut largest) = (0, 0);
    for k in 1..3 {
        if s[k] < s[smallest] {
            smallest = k;
        }
        if s[k] > s[largest] {
            largest = k;
        }
    }
    let middle = 3 - smallest - largest;
    if s[largest] <= 0.0 || s[middle] <= 1e-12 * s[largest] {
        return Err(PnpError::Degenerate("point sets are collinear"));
    }

    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        let flipped = -u.column(smallest);
        u.set_column(smallest, &flipped);
    }
    let r = u * v_t;
    let rot = UnitQuaternion::from_matrix(&r);
    let t = cb - rot * ca;
    Ok(Pose::new(rot, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synthetic::{random_rotation, random_unit_vector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect()
    }

    fn residual(pose: &Pose, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (pose.transform_point(p) - q).norm_squared())
            .sum()
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 10);
        let pose = umeyama_align(&a, &a).unwrap();
        let (dt, dr) = crate::scene::pose_delta(&pose, &Pose::identity());
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn recovers_random_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let truth = Pose::new(
                random_rotation(&mut rng),
                random_unit_vector(&mut rng) * rng.random_range(0.0..10.0),
            );
            let a = cloud(&mut rng, 12);
            let b: Vec<_> = a.iter().map(|p| truth.transform_point(p)).collect();
            let est = umeyama_align(&a, &b).unwrap();
            let (dt, dr) = crate::scene::pose_delta(&est, &truth);
            assert!(dt < 1e-9 && dr < 1e-9, "{dt} {dr}");
            assert!(residual(&est, &a, &b).sqrt() < 1e-9);
        }
    }

    #[test]
    fn reflection_still_yields_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(&mut rng, 15);
        let b: Vec<_> = a.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let est = umeyama_align(&a, &b).unwrap();
        assert!((est.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_and_collinear_input() {
        let a = vec![Vector3::zeros(); 4];
        assert_eq!(umeyama_align(&a, &a[..3]), Err(PnpError::LengthMismatch(4, 3)));
        let line: Vec<_> = (0..5).map(|i| Vector3::x() * i as f64).collect();
        assert!(matches!(umeyama_align(&line, &line), Err(PnpError::Degenerate(_))));
    }

    #[test]
    fn optimal_against_random_rigid_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = Pose::new(random_rotation(&mut rng), Vector3::new(0.5, -1.0, 2.0));
        let a = cloud(&mut rng, 30);
        let b: Vec<_> = a
            .iter()
            .map(|p| truth.transform_point(p) + random_unit_vector(&mut rng) * 0.2)
            .collect();
        let best = residual(&umeyama_align(&a, &b).unwrap(), &a, &b);
        for _ in 0..1000 {
            let cand = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            );
            // nudge around the truth too, so the comparison is not trivially won
            let near = truth.compose(&Pose::new(
                crate::scene::axis_angle(random_unit_vector(&mut rng), 0.05),
                random_unit_vector(&mut rng) * 0.05,
            ));
            assert!(best <= residual(&cand, &a, &b));
            assert!(best <= residual(&near, &a, &b));
        }
    }
}
