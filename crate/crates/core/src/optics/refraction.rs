use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-9;

/// Planar air/water boundary in front of the camera: `{x : normal . x = distance}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatInterface {
    /// Unit normal in the camera frame, pointing into the water.
    pub normal: [f64; 3],
    /// Camera center to plane distance, meters.
    pub distance: f64,
    /// Refractive-index ratio `n_air / n_water`.
    pub eta: f64,
}

impl FlatInterface {
    /// Interface perpendicular to the optical axis.
    pub fn frontal(distance: f64, eta: f64) -> Self {
        Self { normal: [0.0, 0.0, 1.0], distance, eta }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.normal)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal().norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!("interface normal {:?} is not unit length", self.normal)));
        }
        if !(self.distance > 0.0) {
            return Err(Error::InvalidArgument(format!("interface distance must be positive, got {}", self.distance)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "index ratio must lie in (0, 1] for air-to-water, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

fn check_unit(v: &Vector3<f64>, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} must be unit length (|v| = {})", v.norm())));
    }
    Ok(())
}

/// Vector form of Snell's law. `eta` is the ratio of the incident medium's
/// index to the transmitting medium's. The normal may face either way.
pub fn refract_ray(incident: &Vector3<f64>, normal: &Vector3<f64>, eta: f64) -> Result<Vector3<f64>> {
    check_unit(incident, "incident direction")?;
    check_unit(normal, "surface normal")?;
    let mut n = *normal;
    let mut cos_i = n.dot(incident);
    if cos_i < 0.0 {
        n = -n;
        cos_i = -cos_i;
    }
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return Err(Error::NoPath(format!("total internal reflection (sin^2 theta_t = {sin2_t:.6})")));
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Ok((eta * incident + (cos_t - eta * cos_i) * n).normalize())
}

/// Interface point on the refracted path from the camera center to `point`.
pub fn refraction_point(point: &Vector3<f64>, interface: &FlatInterface) -> Result<Vector3<f64>> {
    interface.validate()?;
    let n = interface.normal();
    let d0 = interface.distance;
    let along = n.dot(point);
    if along <= d0 {
        return Err(Error::NoPath(format!(
            "point lies {along:.4} m along the normal, not beyond the interface at {d0:.4} m"
        )));
    }
    let radial = point - along * n;
    let rho = radial.norm();
    if rho < 1e-15 {
        return Ok(d0 * n);
    }
    let e = radial / rho;
    let h = along - d0;
    let eta = interface.eta;
    // sin(theta_water) - eta sin(theta_air), increasing in s on [0, rho]
    let f = |s: f64| eta * s / (s * s + d0 * d0).sqrt() - (rho - s) / ((rho - s).powi(2) + h * h).sqrt();
    let df = |s: f64| {
        eta * d0 * d0 / (s * s + d0 * d0).powf(1.5) + h * h / ((rho - s).powi(2) + h * h).powf(1.5)
    };
    let (mut lo, mut hi) = (0.0, rho);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * rho.max(1e-9) {
            break;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..20 {
        let step = f(s) / df(s);
        s = (s - step).clamp(lo.min(hi), hi.max(lo));
        if step.abs() < 1e-15 * rho.max(1e-3) {
            break;
        }
    }
    Ok(d0 * n + s * e)
}

/// Pixel at which the camera sees a point behind a flat refractive port.
pub fn project_through_interface(
    point: &Vector3<f64>,
    camera: &CameraModel,
    interface: &FlatInterface,
) -> Result<(f64, f64)> {
    let x = refraction_point(point, interface)?;
    camera
        .project(&x)
        .ok_or_else(|| Error::NoPath("refraction point lies behind the camera".into()))
}

/// Ray in water `(origin on the interface, unit direction)` seen by a pixel.
pub fn trace_pixel(camera: &CameraModel, interface: &FlatInterface, u: f64, v: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let n = interface.normal();
    let dir = camera.ray(u, v);
    let cos = n.dot(&dir);
    if cos <= 0.0 {
        return Err(Error::NoPath(format!("pixel ({u:.1}, {v:.1}) does not look through the interface")));
    }
    let origin = dir * (interface.distance / cos);
    let water = refract_ray(&dir, &n, interface.eta)?;
    Ok((origin, water))
}

/// Point on the plane `z = depth` (camera frame) imaged at pixel `(u, v)`.
pub fn backproject_to_depth(
    camera: &CameraModel,
    interface: &FlatInterface,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vector3<f64>> {
    let (o, d) = trace_pixel(camera, interface, u, v)?;
    if d.z <= 0.0 || depth <= o.z {
        return Err(Error::NoPath(format!("depth {depth} m not reachable from pixel ({u:.1}, {v:.1})")));
    }
    Ok(o + d * ((depth - o.z) / d.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const WATER: f64 = 1.0 / 1.33;

    fn unit(theta: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn normal_incidence_and_unit_ratio_pass_through() {
        let z = Vector3::z();
        assert!((refract_ray(&z, &z, WATER).unwrap() - z).norm() < 1e-15);
        let i = unit(0.4, 1.0);
        assert!((refract_ray(&i, &z, 1.0).unwrap() - i).norm() < 1e-15);
    }

    #[test]
    fn thirty_degrees_matches_scalar_snell() {
        let i = unit(30f64.to_radians(), 0.0);
        let t = refract_ray(&i, &Vector3::z(), WATER).unwrap();
        let theta_t = t.x.atan2(t.z);
        let expect = (30f64.to_radians().sin() / 1.33).asin();
        assert!((theta_t - expect).abs() < 1e-12);
        assert!((theta_t.to_degrees() - 22.08).abs() < 0.01);
    }

    #[test]
    fn rejects_non_unit_and_reports_tir() {
        assert!(refract_ray(&Vector3::new(0.0, 0.0, 2.0), &Vector3::z(), WATER).is_err());
        let grazing = unit(80f64.to_radians(), 0.0);
        assert!(matches!(refract_ray(&grazing, &Vector3::z(), 1.33), Err(Error::NoPath(_))));
    }

    proptest! {
        #[test]
        fn snell_planarity_reciprocity(theta in 0.0f64..1.45, phi in -3.1f64..3.1, nt in 0.0f64..0.3, np in -3.1f64..3.1) {
            let n = unit(nt, np);
            let i = unit(theta, phi);
            prop_assume!(i.dot(&n) > 0.05);
            let t = refract_ray(&i, &n, WATER).unwrap();
            prop_assert!((t.norm() - 1.0).abs() < 1e-12);
            let sin_i = i.cross(&n).norm();
            let sin_t = t.cross(&n).norm();
            prop_assert!((sin_t - WATER * sin_i).abs() < 1e-12);
            prop_assert!(i.cross(&n).dot(&t).abs() < 1e-12);
            let back = refract_ray(&(-t), &n, 1.0 / WATER).unwrap();
            prop_assert!((back + i).norm() < 1e-10);
        }
    }

    fn camera() -> CameraModel {
        CameraModel::pinhole(1000.0, 1000.0, 640.0, 480.0, 1280, 960)
    }

    #[test]
    fn axial_point_hits_principal_point() {
        let p = project_through_interface(&Vector3::new(0.0, 0.0, 0.7), &camera(), &FlatInterface::frontal(0.05, WATER)).unwrap();
        assert_eq!(p, (640.0, 480.0));
    }

    #[test]
    fn unit_ratio_is_pinhole() {
        let cam = camera();
        let iface = FlatInterface::frontal(0.05, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.2..1.0));
            let a = project_through_interface(&p, &cam, &iface).unwrap();
            let b = cam.project(&p).unwrap();
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_satisfies_snell_and_backprojection() {
        let _ = camera();
        let iface = FlatInterface { normal: unit(0.1, 0.7).into(), distance: 0.04, eta: WATER };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(0.15..1.0));
            let x = refraction_point(&p, &iface).unwrap();
            let n = iface.normal();
            let air = x.normalize();
            let water = (p - x).normalize();
            let resid = water.cross(&n).norm() - WATER * air.cross(&n).norm();
            assert!(resid.abs() < 1e-10, "{resid}");
        }
    }

    #[test]
    fn point_in_front_of_interface_has_no_path() {
        let r = project_through_interface(&Vector3::new(0.0, 0.0, 0.01), &camera(), &FlatInterface::frontal(0.05, WATER));
        assert!(matches!(r, Err(Error::NoPath(_))));
    }
}
