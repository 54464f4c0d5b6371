use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::kv::KvDoc;
use crate::optics::CameraModel;

const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Calibrated two-camera rig plus its rectification.
///
/// `rotation` and `translation` give the right camera's orientation and
/// center in the left camera frame: `X_left = rotation * X_right + translation`.
/// Rectified coordinates use a shared pinhole `rectified` with both cameras
/// rotated onto a common plane; the right camera then sits at `(+baseline, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rectified: CameraModel,
    /// Rotation from the original left camera frame to the rectified frame.
    pub rect_rotation: Matrix3<f64>,
    /// Homographies from ideal (undistorted) pixels to rectified pixels.
    pub h_left: Matrix3<f64>,
    pub h_right: Matrix3<f64>,
    pub baseline: f64,
}

pub struct RectifiedPair {
    pub left: Image,
    pub right: Image,
    pub left_valid: Mask,
    pub right_valid: Mask,
}

fn intrinsics(c: &CameraModel) -> Matrix3<f64> {
    Matrix3::new(c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, u: f64, v: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(u, v, 1.0);
    if p.z.abs() < 1e-12 {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

impl StereoRig {
    pub fn new(left: CameraModel, right: CameraModel, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        left.validate()?;
        right.validate()?;
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOLERANCE || rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!("rig rotation is not a proper rotation (|R^T R - I| = {err:e})")));
        }
        let baseline = translation.norm();
        if !(baseline > 0.0) {
            return Err(Error::InvalidArgument("rig baseline must be positive".into()));
        }

        // rotate each camera half-way, then align x with the baseline
        let half = Rotation3::from_matrix_unchecked(rotation).powf(0.5);
        let t = half.inverse() * translation;
        if t.x <= 0.0 {
            return Err(Error::InvalidArgument("right camera must lie on the +x side of the left camera".into()));
        }
        let e1 = t / baseline;
        let e2 = Vector3::new(-t.y, t.x, 0.0).normalize();
        let e3 = e1.cross(&e2);
        let align = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
        let rect_rotation = align * half.inverse().matrix();

        let f = 0.5 * (left.fy + right.fy);
        let rectified = CameraModel::pinhole(f, f, left.cx, 0.5 * (left.cy + right.cy), left.width, left.height);
        let k_new = intrinsics(&rectified);
        let inv = |c: &CameraModel| intrinsics(c).try_inverse().expect("validated intrinsics are invertible");
        let h_left = k_new * rect_rotation * inv(&left);
        let h_right = k_new * rect_rotation * rotation * inv(&right);
        for (name, h) in [("left", &h_left), ("right", &h_right)] {
            let scale = h.abs().max().powi(3);
            if h.determinant().abs() < 1e-12 * scale {
                return Err(Error::Numeric(format!("{name} rectifying homography is degenerate")));
            }
        }
        Ok(Self { left, right, rotation, translation, rectified, rect_rotation, h_left, h_right, baseline })
    }

    /// A rig whose images are already rectified: identical distortion-free
    /// cameras, identity rotation, baseline along +x.
    pub fn rectified_pair(camera: CameraModel, baseline: f64) -> Result<Self> {
        Self::new(camera.without_distortion(), camera.without_distortion(), Matrix3::identity(), Vector3::new(baseline, 0.0, 0.0))
    }

    fn side(&self, side: Side) -> (&CameraModel, &Matrix3<f64>) {
        match side {
            Side::Left => (&self.left, &self.h_left),
            Side::Right => (&self.right, &self.h_right),
        }
    }

    /// Rectified position of a raw (distorted) pixel.
    pub fn rectify_point(&self, side: Side, u: f64, v: f64) -> Option<(f64, f64)> {
        let (cam, h) = self.side(side);
        let (iu, iv) = cam.undistort_pixel(u, v);
        apply_h(h, iu, iv)
    }

    /// Raw (distorted) pixel that maps to rectified pixel `(u, v)`.
    pub fn unrectify_point(&self, side: Side, u: f64, v: f64) -> Option<(f64, f64)> {
        let (cam, h) = self.side(side);
        let (iu, iv) = apply_h(&h.try_inverse()?, u, v)?;
        Some(cam.distort_pixel(iu, iv))
    }

    /// Undistorts and rectifies one raw image in a single resampling.
    pub fn rectify_image(&self, side: Side, image: &Image) -> (Image, Mask) {
        let (w, h) = (self.rectified.width, self.rectified.height);
        let mut out = Image::new(w, h);
        let mut valid = Mask::new(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if let Some(val) = self.unrectify_point(side, x as f64, y as f64).and_then(|(u, v)| image.bilinear(u, v)) {
                    out.set(x, y, val);
                    valid.set(x, y, true);
                }
            }
        }
        (out, valid)
    }

    /// Inverse of [`Self::rectify_image`], back onto the raw pixel grid.
    pub fn unrectify_image(&self, side: Side, image: &Image) -> (Image, Mask) {
        let (cam, _) = self.side(side);
        let mut out = Image::new(cam.width, cam.height);
        let mut valid = Mask::new(cam.width, cam.height, false);
        for y in 0..cam.height {
            for x in 0..cam.width {
                if let Some(val) = self.rectify_point(side, x as f64, y as f64).and_then(|(u, v)| image.bilinear(u, v)) {
                    out.set(x, y, val);
                    valid.set(x, y, true);
                }
            }
        }
        (out, valid)
    }

    pub fn rectify_pair(&self, left: &Image, right: &Image) -> Result<RectifiedPair> {
        for (name, img, cam) in [("left", left, &self.left), ("right", right, &self.right)] {
            if img.dims() != (cam.width, cam.height) {
                return Err(Error::Shape(format!(
                    "{name} image is {}x{}, rig expects {}x{}",
                    img.width(),
                    img.height(),
                    cam.width,
                    cam.height
                )));
            }
        }
        let (left, left_valid) = self.rectify_image(Side::Left, left);
        let (right, right_valid) = self.rectify_image(Side::Right, right);
        Ok(RectifiedPair { left, right, left_valid, right_valid })
    }

    /// Original left-camera coordinates to the rectified frame.
    pub fn to_rectified_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rect_rotation * p
    }

    /// Rectified-frame point to `(left pixel, right pixel)`.
    pub fn project_rectified(&self, p: &Vector3<f64>) -> Option<((f64, f64), (f64, f64))> {
        let l = self.rectified.project(p)?;
        let r = self.rectified.project(&(p - Vector3::new(self.baseline, 0.0, 0.0)))?;
        Some((l, r))
    }

    /// Rectified-frame point seen at left pixel `(u, v)` with disparity `d`;
    /// `None` for non-positive disparity.
    pub fn triangulate(&self, u: f64, v: f64, disparity: f64) -> Option<Vector3<f64>> {
        if !(disparity > 0.0) || !disparity.is_finite() {
            return None;
        }
        let c = &self.rectified;
        let z = c.fx * self.baseline / disparity;
        Some(Vector3::new((u - c.cx) * z / c.fx, (v - c.cy) * z / c.fy, z))
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        self.left.write_kv(&mut d, "left_");
        self.right.write_kv(&mut d, "right_");
        d.set_nums("rotation", self.rotation.transpose().as_slice());
        d.set_nums("translation", self.translation.as_slice());
        d.set_nums("homography_left", self.h_left.transpose().as_slice());
        d.set_nums("homography_right", self.h_right.transpose().as_slice());
        d.set_nums("baseline", &[self.baseline]);
        d
    }

    /// Reads a rig file. Rectification is recomputed from the calibration and
    /// must agree with the stored homographies.
    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let mut known = vec!["rotation", "translation", "homography_left", "homography_right", "baseline"];
        let keys: Vec<String> = ["left_", "right_"]
            .iter()
            .flat_map(|p| ["image_size", "camera_matrix", "distortion"].map(|k| format!("{p}{k}")))
            .collect();
        known.extend(keys.iter().map(String::as_str));
        d.check_keys(&known)?;
        let left = CameraModel::read_kv(d, "left_")?;
        let right = CameraModel::read_kv(d, "right_")?;
        let rotation = Matrix3::from_row_slice(&d.nums("rotation", 9)?);
        let t = d.nums("translation", 3)?;
        let rig = Self::new(left, right, rotation, Vector3::new(t[0], t[1], t[2])).map_err(|e| Error::Format(e.to_string()))?;
        for (key, h) in [("homography_left", &rig.h_left), ("homography_right", &rig.h_right)] {
            let stored = Matrix3::from_row_slice(&d.nums(key, 9)?);
            if (stored - h).abs().max() > 1e-6 * h.abs().max() {
                return Err(Error::Format(format!("`{key}` disagrees with the rig calibration")));
            }
        }
        Ok(rig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::pinhole(500.0, 500.0, 160.0, 120.0, 320, 240)
    }

    #[test]
    fn rectified_rig_has_identity_homographies() {
        let rig = StereoRig::rectified_pair(cam(), 0.1).unwrap();
        assert!((rig.h_left - Matrix3::identity()).abs().max() < 1e-12);
        assert!((rig.h_right - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn triangulation_formula() {
        let c = CameraModel::pinhole(1000.0, 1000.0, 0.0, 0.0, 640, 480);
        let rig = StereoRig::rectified_pair(c, 0.1).unwrap();
        assert!((rig.triangulate(0.0, 0.0, 100.0).unwrap().z - 1.0).abs() < 1e-15);
        assert!((rig.triangulate(0.0, 0.0, 200.0).unwrap().z - 0.5).abs() < 1e-15);
        assert!(rig.triangulate(3.0, 4.0, 0.0).is_none());
        assert!(rig.triangulate(3.0, 4.0, -1.0).is_none());
    }

    #[test]
    fn rejects_bad_rotation_and_zero_baseline() {
        let r = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(StereoRig::new(cam(), cam(), r, Vector3::x()).is_err());
        assert!(StereoRig::new(cam(), cam(), Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let r = Rotation3::from_euler_angles(0.01, -0.03, 0.02).into_inner();
        let rig = StereoRig::new(cam(), cam(), r, Vector3::new(0.12, 0.003, -0.002)).unwrap();
        let back = StereoRig::from_kv(&KvDoc::parse(&rig.to_kv().render("rig")).unwrap()).unwrap();
        assert!((back.h_left - rig.h_left).abs().max() < 1e-9);
        assert_eq!(back.baseline, rig.baseline);
    }
}
