use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};

use super::graycode::CorrespondenceMap;
use crate::error::{Error, Result};
use crate::lm::{self, LmOptions};
use crate::optics::CameraModel;

pub const MIN_CORRESPONDENCES: usize = 200;

/// Lens distortion explaining a display-to-camera warp:
/// `camera pixel = distort(homography * display pixel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionFit {
    /// Nominal intrinsics with the fitted distortion coefficients.
    pub camera: CameraModel,
    /// Display pixel to ideal camera pixel, normalized so `h[(2, 2)] = 1`.
    pub homography: Matrix3<f64>,
    /// RMS reprojection error in camera pixels.
    pub rms: f64,
    pub count: usize,
}

impl DistortionFit {
    /// Predicted camera pixel for a display pixel.
    pub fn predict(&self, target: (f64, f64)) -> Option<(f64, f64)> {
        let q = self.homography * Vector3::new(target.0, target.1, 1.0);
        if q.z.abs() < 1e-12 {
            return None;
        }
        Some(self.camera.distort_pixel(q.x / q.z, q.y / q.z))
    }

    /// RMS reprojection error over arbitrary pairs.
    pub fn rms_on(&self, pairs: &[((f64, f64), (f64, f64))]) -> f64 {
        let sq: f64 = pairs
            .iter()
            .map(|&(c, t)| match self.predict(t) {
                Some(p) => (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2),
                None => f64::INFINITY,
            })
            .sum();
        (sq / pairs.len().max(1) as f64).sqrt()
    }
}

/// Ratio of the smaller to the larger principal spread of a point set.
fn spread_ratio(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let (mx, my) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mut cov = Matrix2::zeros();
    for (x, y) in points {
        let d = nalgebra::Vector2::new(x - mx, y - my);
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Similarity transform taking points to zero mean and mean distance sqrt(2).
fn normalizer(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mean_dist = points.iter().map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = std::f64::consts::SQRT_2 / mean_dist.max(1e-12);
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform: homography mapping `from` onto `to`.
fn dlt(from: &[(f64, f64)], to: &[(f64, f64)]) -> Result<Matrix3<f64>> {
    let (tf, tt) = (normalizer(from), normalizer(to));
    let mut a = DMatrix::zeros(2 * from.len(), 9);
    for (i, (p, q)) in from.iter().zip(to).enumerate() {
        let p = tf * Vector3::new(p.0, p.1, 1.0);
        let q = tt * Vector3::new(q.0, q.1, 1.0);
        let row = [-p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x];
        let row2 = [0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y];
        for j in 0..9 {
            a[(2 * i, j)] = row[j];
            a[(2 * i + 1, j)] = row2[j];
        }
    }
    // smallest right singular vector via the 9x9 normal matrix
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (k, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let hm = tt.try_inverse().ok_or_else(|| Error::Numeric("degenerate normalization".into()))? * hn * tf;
    if hm[(2, 2)].abs() < 1e-15 {
        return Err(Error::Numeric("homography estimate is degenerate".into()));
    }
    Ok(hm / hm[(2, 2)])
}

/// Fits distortion coefficients (k1, k2, k3, p1, p2) and a display
/// homography with `nominal`'s focal lengths and principal point held fixed.
pub fn fit_distortion_from_points(pairs: &[((f64, f64), (f64, f64))], nominal: &CameraModel) -> Result<DistortionFit> {
    nominal.validate()?;
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InvalidArgument(format!(
            "{} correspondences given, at least {MIN_CORRESPONDENCES} required",
            pairs.len()
        )));
    }
    let cam_pts: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
    let tgt_pts: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
    for (name, pts) in [("camera", &cam_pts), ("display", &tgt_pts)] {
        if spread_ratio(pts.iter().copied()) < 1e-4 {
            return Err(Error::InvalidArgument(format!("{name} points are nearly collinear; the fit is rank deficient")));
        }
    }
    let h0 = dlt(&tgt_pts, &cam_pts)?;
    // H = H0 (I + D) with the 8 free entries of D, then distortion
    let build = |p: &[f64]| -> (Matrix3<f64>, CameraModel) {
        let d = Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 0.0);
        let h = h0 * (Matrix3::identity() + d);
        let cam = CameraModel { k1: p[8], k2: p[9], k3: p[10], p1: p[11], p2: p[12], ..nominal.without_distortion() };
        (h / h[(2, 2)], cam)
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        let (h, cam) = build(p);
        let fit = DistortionFit { camera: cam, homography: h, rms: 0.0, count: 0 };
        let mut r = Vec::with_capacity(2 * pairs.len());
        for &(c, t) in pairs {
            let (u, v) = fit.predict(t).unwrap_or((1e6, 1e6));
            r.push(u - c.0);
            r.push(v - c.1);
        }
        r
    };
    let report = lm::minimize(residuals, &[0.0; 13], &LmOptions::default())?;
    if report.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("distortion fit diverged".into()));
    }
    let (homography, camera) = build(&report.params);
    let mut fit = DistortionFit { camera, homography, rms: 0.0, count: pairs.len() };
    fit.rms = fit.rms_on(pairs);
    Ok(fit)
}

pub fn fit_distortion_from_correspondences(map: &CorrespondenceMap, nominal: &CameraModel) -> Result<DistortionFit> {
    fit_distortion_from_points(&map.pairs(), nominal)
}
