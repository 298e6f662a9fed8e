use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneError;

/// Pinhole intrinsics. Pixel centers sit at integer coordinates, so pixel
/// `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Minimum renderable / valid camera-frame depth in meters.
    pub near: f64,
}

impl Default for CameraIntrinsics {
    /// 320x240 with a ~65° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 250.0,
            fy: 250.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
            near: 0.1,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, near: f64) -> Result<Self, SceneError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = [self.fx, self.fy, self.near].iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidCamera(
                "focal lengths, near plane and image size must be positive".into(),
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(SceneError::InvalidCamera(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Same field of view at `factor` times the resolution.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            near: self.near,
        }
    }

    /// Pinhole projection of a camera-frame point. No depth check.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) * depth / self.fx,
            (pixel.y - self.cy) * depth / self.fy,
            depth,
        )
    }

    /// True when `pixel` lies within the span of pixel centers,
    /// `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (self.width - 1) as f64 && pixel.y <= (self.height - 1) as f64
    }
}
