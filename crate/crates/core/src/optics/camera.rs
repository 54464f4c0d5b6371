use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Pinhole intrinsics with Brown-Conrady radial (k1, k2, k3) and tangential
/// (p1, p2) distortion, applied to normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0, k3: 0.0, p1: 0.0, p2: 0.0, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image extents must be positive".into()));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2].iter().any(|&c| c != 0.0)
    }

    pub fn without_distortion(&self) -> Self {
        Self { k1: 0.0, k2: 0.0, k3: 0.0, p1: 0.0, p2: 0.0, ..*self }
    }

    /// Applies distortion to ideal normalized coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (x * radial + dx, y * radial + dy)
    }

    fn distortion_jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dradial = self.k1 + 2.0 * self.k2 * r2 + 3.0 * self.k3 * r2 * r2; // d radial / d r2
        let (p1, p2) = (self.p1, self.p2);
        Matrix2::new(
            radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }

    /// Inverts [`Self::distort_normalized`] by Newton iteration.
    pub fn undistort_normalized(&self, xd: f64, yd: f64) -> (f64, f64) {
        if !self.has_distortion() {
            return (xd, yd);
        }
        let target = Vector2::new(xd, yd);
        let mut p = target;
        for _ in 0..50 {
            let (fx, fy) = self.distort_normalized(p.x, p.y);
            let resid = Vector2::new(fx, fy) - target;
            if resid.norm() < 1e-15 {
                break;
            }
            let Some(inv) = self.distortion_jacobian(p.x, p.y).try_inverse() else { break };
            p -= inv * resid;
        }
        (p.x, p.y)
    }

    pub fn normalized_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (xd, yd) = self.distort_normalized(x, y);
        (self.fx * xd + self.cx, self.fy * yd + self.cy)
    }

    pub fn pixel_to_normalized(&self, u: f64, v: f64) -> (f64, f64) {
        self.undistort_normalized((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some(self.normalized_to_pixel(p.x / p.z, p.y / p.z))
    }

    /// Unit viewing ray of a pixel.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let (x, y) = self.pixel_to_normalized(u, v);
        Vector3::new(x, y, 1.0).normalize()
    }

    /// Maps an ideal (undistorted) pixel to where the lens images it.
    pub fn distort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        self.normalized_to_pixel((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Stores the model under `{prefix}image_size`, `{prefix}camera_matrix`
    /// (row-major 3x3) and `{prefix}distortion` (k1 k2 p1 p2 k3).
    pub fn write_kv(&self, d: &mut KvDoc, prefix: &str) {
        d.set_nums(&format!("{prefix}image_size"), &[self.width as f64, self.height as f64]);
        d.set_nums(&format!("{prefix}camera_matrix"), &[self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]);
        d.set_nums(&format!("{prefix}distortion"), &[self.k1, self.k2, self.p1, self.p2, self.k3]);
    }

    pub fn read_kv(d: &KvDoc, prefix: &str) -> Result<Self> {
        let size = d.nums(&format!("{prefix}image_size"), 2)?;
        let k = d.nums(&format!("{prefix}camera_matrix"), 9)?;
        let dist = d.nums(&format!("{prefix}distortion"), 5)?;
        let cam = CameraModel {
            fx: k[0],
            fy: k[4],
            cx: k[2],
            cy: k[5],
            k1: dist[0],
            k2: dist[1],
            p1: dist[2],
            p2: dist[3],
            k3: dist[4],
            width: size[0] as usize,
            height: size[1] as usize,
        };
        cam.validate().map_err(|e| Error::Format(format!("camera `{prefix}`: {e}")))?;
        Ok(cam)
    }

    /// Maps a distorted pixel to its ideal pinhole position.
    pub fn undistort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let (x, y) = self.pixel_to_normalized(u, v);
        (self.fx * x + self.cx, self.fy * y + self.cy)
    }
}
