//! Depth-dependent central approximation of a flat-port camera.
//!
//! A planar board seen through the port is fitted by a pinhole camera with
//! radial/tangential distortion whose projection center may slide along the
//! interface normal (the board pose's axial component). The fit is exact
//! only near the calibration depth; [`approximation_error_curve`] measures
//! how it degrades elsewhere.

use nalgebra::Vector3;

use super::camera::CameraModel;
use super::refraction::{backproject_to_depth, FlatInterface};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::lm::{self, LmOptions};

/// Regular pixel lattice used as the simulated calibration target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationGrid {
    pub cols: usize,
    pub rows: usize,
    /// Fraction of the image extent spanned, centered on the principal point.
    pub coverage: f64,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self { cols: 21, rows: 21, coverage: 0.8 }
    }
}

impl CalibrationGrid {
    pub fn pixels(&self, camera: &CameraModel) -> Vec<(f64, f64)> {
        let span_u = self.coverage * camera.width as f64;
        let span_v = self.coverage * camera.height as f64;
        let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        let mut out = Vec::with_capacity(self.cols * self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push((camera.cx + frac(c, self.cols) * span_u, camera.cy + frac(r, self.rows) * span_v));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOptions {
    pub grid: CalibrationGrid,
    /// Boards are placed at `depth - spread`, `depth`, `depth + spread`; a
    /// single fronto-parallel board cannot separate focal length from the
    /// axial center offset.
    pub board_spread: f64,
    pub lm: LmOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { grid: CalibrationGrid::default(), board_spread: 0.02, lm: LmOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthCalibration {
    pub calibration_depth: f64,
    pub camera: CameraModel,
    /// Displacement of the projection center along the interface normal, m.
    pub axial_offset: f64,
    pub interface: FlatInterface,
    /// RMS reprojection error at the calibration depth, pixels.
    pub residual: f64,
    /// RMS over all boards used in the fit, pixels.
    pub fit_rms: f64,
}

impl DepthCalibration {
    fn center(&self) -> Vector3<f64> {
        self.axial_offset * self.interface.normal()
    }

    /// Projection of a camera-frame point by the central approximation.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        self.camera.project(&(p - self.center()))
    }

    /// Point on `z = depth` that the approximation assigns to pixel `(u, v)`.
    pub fn backproject_to_depth(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        let (x, y) = self.camera.pixel_to_normalized(u, v);
        let c = self.center();
        let s = depth - c.z;
        if s <= 0.0 {
            return Err(Error::InvalidArgument(format!("depth {depth} behind the projection center")));
        }
        Ok(c + s * Vector3::new(x, y, 1.0))
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        self.camera.write_kv(&mut d, "");
        d.set_nums("interface_normal", &self.interface.normal);
        d.set_nums("interface_distance", &[self.interface.distance]);
        d.set_nums("interface_eta", &[self.interface.eta]);
        d.set_nums("calibration_depth", &[self.calibration_depth]);
        d.set_nums("axial_offset", &[self.axial_offset]);
        d.set_nums("residual_px", &[self.residual]);
        d.set_nums("fit_rms_px", &[self.fit_rms]);
        d
    }

    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        d.check_keys(&[
            "image_size",
            "camera_matrix",
            "distortion",
            "interface_normal",
            "interface_distance",
            "interface_eta",
            "calibration_depth",
            "axial_offset",
            "residual_px",
            "fit_rms_px",
        ])?;
        let camera = CameraModel::read_kv(d, "")?;
        let n = d.nums("interface_normal", 3)?;
        let interface = FlatInterface {
            normal: [n[0], n[1], n[2]],
            distance: d.num("interface_distance")?,
            eta: d.num("interface_eta")?,
        };
        interface.validate()?;
        Ok(Self {
            calibration_depth: d.num("calibration_depth")?,
            camera,
            axial_offset: d.num("axial_offset")?,
            interface,
            residual: d.num("residual_px")?,
            fit_rms: d.num("fit_rms_px")?,
        })
    }
}

const PARAMS: usize = 10;

fn unpack(p: &[f64], template: &CameraModel) -> (CameraModel, f64) {
    let cam = CameraModel {
        fx: p[0],
        fy: p[1],
        cx: p[2],
        cy: p[3],
        k1: p[4],
        k2: p[5],
        k3: p[6],
        p1: p[7],
        p2: p[8],
        ..*template
    };
    (cam, p[9])
}

/// Simulated board observations: `(pixel, camera-frame point)` for every grid
/// node whose refracted path reaches the board plane.
pub fn board_observations(
    camera: &CameraModel,
    interface: &FlatInterface,
    depth: f64,
    grid: &CalibrationGrid,
) -> Result<Vec<((f64, f64), Vector3<f64>)>> {
    grid.pixels(camera)
        .into_iter()
        .map(|(u, v)| Ok(((u, v), backproject_to_depth(camera, interface, u, v, depth)?)))
        .collect()
}

pub fn fit_depth_calibration(
    true_camera: &CameraModel,
    interface: &FlatInterface,
    depth: f64,
    grid: CalibrationGrid,
) -> Result<DepthCalibration> {
    fit_depth_calibration_with(true_camera, interface, depth, &CalibrationOptions { grid, ..Default::default() })
}

pub fn fit_depth_calibration_with(
    true_camera: &CameraModel,
    interface: &FlatInterface,
    depth: f64,
    opts: &CalibrationOptions,
) -> Result<DepthCalibration> {
    true_camera.validate()?;
    interface.validate()?;
    let along_axis = interface.distance / interface.normal[2].max(1e-9);
    if depth <= along_axis {
        return Err(Error::InvalidArgument(format!(
            "calibration depth {depth} m must exceed the interface distance {along_axis:.4} m"
        )));
    }
    let spread = opts.board_spread.min(0.5 * (depth - along_axis));
    let depths = [depth - spread, depth, depth + spread];
    let mut obs = Vec::new();
    for &z in &depths {
        obs.push(board_observations(true_camera, interface, z, &opts.grid)?);
    }
    let center = &obs[1];
    let all: Vec<_> = obs.iter().flatten().cloned().collect();
    let n = interface.normal();

    let eta = interface.eta;
    let p0 = [
        true_camera.fx / eta,
        true_camera.fy / eta,
        true_camera.cx,
        true_camera.cy,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        // paraxial virtual center of a flat port
        -interface.distance * (1.0 - eta) / eta,
    ];
    let residuals = |p: &[f64]| -> Vec<f64> {
        let (cam, t) = unpack(p, true_camera);
        let mut r = Vec::with_capacity(all.len() * 2);
        for ((u, v), pt) in &all {
            match cam.project(&(pt - t * n)) {
                Some((pu, pv)) => {
                    r.push(pu - u);
                    r.push(pv - v);
                }
                None => {
                    r.push(1e6);
                    r.push(1e6);
                }
            }
        }
        r
    };
    let report = lm::minimize(residuals, &p0, &opts.lm)?;
    debug_assert_eq!(report.params.len(), PARAMS);
    let (camera, axial_offset) = unpack(&report.params, true_camera);
    let mut calib = DepthCalibration {
        calibration_depth: depth,
        camera,
        axial_offset,
        interface: *interface,
        residual: 0.0,
        fit_rms: report.rms * std::f64::consts::SQRT_2,
    };
    let sq: f64 = center
        .iter()
        .map(|((u, v), pt)| {
            let (pu, pv) = calib.project(pt).unwrap_or((f64::INFINITY, f64::INFINITY));
            (pu - u).powi(2) + (pv - v).powi(2)
        })
        .sum();
    calib.residual = (sq / center.len() as f64).sqrt();
    Ok(calib)
}

/// Approximation error at one depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSample {
    pub depth: f64,
    /// Max over the grid of metric displacement / depth.
    pub max_rel: f64,
    /// RMS over the grid of metric displacement / depth.
    pub rms_rel: f64,
    /// Max pixel discrepancy between physical and approximate projection.
    pub max_px: f64,
}

/// For each depth, compares where the physical model and the approximation
/// place the grid points on the plane `z = depth`.
pub fn approximation_error_curve(
    calib: &DepthCalibration,
    interface: &FlatInterface,
    true_camera: &CameraModel,
    depths: &[f64],
    grid: &CalibrationGrid,
) -> Result<Vec<ErrorSample>> {
    let pixels = grid.pixels(true_camera);
    depths
        .iter()
        .map(|&z| {
            let mut max_rel: f64 = 0.0;
            let mut sum_sq = 0.0;
            let mut max_px: f64 = 0.0;
            for &(u, v) in &pixels {
                let truth = backproject_to_depth(true_camera, interface, u, v, z)?;
                let approx = calib.backproject_to_depth(u, v, z)?;
                let rel = (approx - truth).norm() / z;
                max_rel = max_rel.max(rel);
                sum_sq += rel * rel;
                if let Some((pu, pv)) = calib.project(&truth) {
                    max_px = max_px.max(((pu - u).powi(2) + (pv - v).powi(2)).sqrt());
                }
            }
            Ok(ErrorSample { depth: z, max_rel, rms_rel: (sum_sq / pixels.len() as f64).sqrt(), max_px })
        })
        .collect()
}

/// `n` evenly spaced depths over `[lo, hi]`.
pub fn depth_range(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
