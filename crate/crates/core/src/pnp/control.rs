use nalgebra::{Matrix3, SymmetricEigen, Vector3, Vector4};

use super::PnpError;

/// Four virtual control points and the barycentric weights expressing each
/// input point as their affine combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    pub points: [Vector3<f64>; 4],
    /// One weight 4-vector per input point; each sums to 1.
    pub weights: Vec<Vector4<f64>>,
}

impl ControlPointSet {
    /// `Σ_j a_ij C_j` for point `i` against arbitrary control points (world or
    /// camera frame).
    pub fn combine(weights: &Vector4<f64>, ctrl: &[Vector3<f64>; 4]) -> Vector3<f64> {
        ctrl[0] * weights[0] + ctrl[1] * weights[1] + ctrl[2] * weights[2] + ctrl[3] * weights[3]
    }

    pub fn tetrahedron_volume(&self) -> f64 {
        let [c0, c1, c2, c3] = &self.points;
        Matrix3::from_columns(&[c1 - c0, c2 - c0, c3 - c0]).determinant().abs() / 6.0
    }
}

/// First control point is the centroid; the others sit one standard
/// deviation along each principal axis of the point cloud.
pub fn compute_control_points(world: &[Vector3<f64>]) -> Result<ControlPointSet, PnpError> {
    if world.len() < 4 {
        return Err(PnpError::InsufficientMatches {
            needed: 4,
            got: world.len(),
        });
    }
    let n = world.len() as f64;
    let centroid = world.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda = order.map(|k| eig.eigenvalues[k].max(0.0));
    let axes = order.map(|k| eig.eigenvectors.column(k).into_owned());

    if lambda[0] <= 1e-24 || lambda[1] <= 1e-12 * lambda[0] {
        return Err(PnpError::Degenerate("points are collinear or coincident"));
    }
    if lambda[2] <= 1e-10 * lambda[0] {
        return Err(PnpError::Coplanar);
    }

    let sigma = lambda.map(f64::sqrt);
    let points = [
        centroid,
        centroid + axes[0] * sigma[0],
        centroid + axes[1] * sigma[1],
        centroid + axes[2] * sigma[2],
    ];
    let set_volume = sigma[0] * sigma[1] * sigma[2] / 6.0;
    if set_volume <= 1e-9 {
        return Err(PnpError::Coplanar);
    }

    // (C1-C0, C2-C0, C3-C0) = V·diag(σ), so its inverse is diag(1/σ)·Vᵀ.
    let weights = world
        .iter()
        .map(|p| {
            let d = p - centroid;
            let b = Vector3::new(
                axes[0].dot(&d) / sigma[0],
                axes[1].dot(&d) / sigma[1],
                axes[2].dot(&d) / sigma[2],
            );
            Vector4::new(1.0 - b.sum(), b.x, b.y, b.z)
        })
        .collect();
    Ok(ControlPointSet { points, weights })
}
