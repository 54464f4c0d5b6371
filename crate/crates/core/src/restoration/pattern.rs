use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::CameraModel;

/// Procedural wavy-line texture cast by a virtual projector.
///
/// The projector looks along +z with the camera's orientation, sits at
/// `position` (rig frame, meters) and has focal length `focal` in its own
/// pixels. In projector pixels, lines run across `orientation` and repeat
/// every `wavelength`; each line undulates sideways by `amplitude` with
/// period `undulation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectedPattern {
    pub wavelength: f64,
    pub amplitude: f64,
    pub undulation: f64,
    /// Radians; 0 gives lines that are vertical apart from the undulation.
    pub orientation: f64,
    /// Gaussian half-width of a line, projector pixels.
    pub line_width: f64,
    pub intensity: f64,
    pub position: [f64; 3],
    pub focal: f64,
}

impl Default for ProjectedPattern {
    fn default() -> Self {
        Self {
            wavelength: 7.0,
            amplitude: 2.0,
            undulation: 23.0,
            orientation: 0.0,
            line_width: 1.2,
            intensity: 0.6,
            position: [0.05, 0.0, 0.0],
            focal: 500.0,
        }
    }
}

impl ProjectedPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(Error::InvalidArgument(format!("pattern intensity must lie in (0, 1], got {}", self.intensity)));
        }
        if !(self.wavelength > 2.0) {
            return Err(Error::InvalidArgument(format!("pattern wavelength must exceed 2 px, got {}", self.wavelength)));
        }
        if !(self.line_width > 0.0 && self.undulation > 0.0 && self.focal > 0.0) {
            return Err(Error::InvalidArgument("pattern line width, undulation and focal length must be positive".into()));
        }
        Ok(())
    }

    /// Pattern brightness at projector pixel `(s, t)`.
    pub fn value_at(&self, s: f64, t: f64) -> f64 {
        let (sin, cos) = self.orientation.sin_cos();
        let a = s * cos + t * sin;
        let b = -s * sin + t * cos;
        let a = a - self.amplitude * (std::f64::consts::TAU * b / self.undulation).sin();
        let dist = a - self.wavelength * (a / self.wavelength).round();
        self.intensity * (-0.5 * (dist / self.line_width).powi(2)).exp()
    }

    /// Projector pixel lighting the rig-frame point `p`.
    pub fn projector_pixel(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let q = p - Vector3::from(self.position);
        (q.z > 0.0).then(|| (self.focal * q.x / q.z, self.focal * q.y / q.z))
    }
}

/// Additive pattern layer seen by a pinhole camera centered at `center` (rig
/// frame) given per-pixel depth along its optical axis. Non-finite or
/// non-positive depth receives no light.
pub fn pattern_layer(depth: &Image, camera: &CameraModel, center: &Vector3<f64>, pattern: &ProjectedPattern) -> Result<Image> {
    pattern.validate()?;
    Ok(Image::from_fn(depth.width(), depth.height(), |x, y| {
        let z = depth.get(x, y);
        if !(z > 0.0 && z.is_finite()) {
            return 0.0;
        }
        let p = center + z * Vector3::new((x as f64 - camera.cx) / camera.fx, (y as f64 - camera.cy) / camera.fy, 1.0);
        match pattern.projector_pixel(&p) {
            Some((s, t)) => pattern.value_at(s, t),
            None => 0.0,
        }
    }))
}

/// Adds the projected pattern to `clean`, clamping to [0, 1].
pub fn synth_pattern(
    clean: &Image,
    depth: &Image,
    camera: &CameraModel,
    center: &Vector3<f64>,
    pattern: &ProjectedPattern,
) -> Result<Image> {
    if clean.dims() != depth.dims() {
        return Err(Error::Shape("depth proxy must match the image extents".into()));
    }
    let layer = pattern_layer(depth, camera, center, pattern)?;
    Ok(Image::from_fn(clean.width(), clean.height(), |x, y| (clean.get(x, y) + layer.get(x, y)).clamp(0.0, 1.0)))
}
