use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwstereo::image::{psnr_masked, Image, Mask};
use uwstereo::optics::*;

const WATER: f64 = 1.0 / 1.33;

fn camera() -> CameraModel {
    CameraModel::pinhole(1400.0, 1400.0, 640.0, 512.0, 1280, 1024)
}

/// Fermat: the refracted path minimizes optical length |X| + |P - X| / eta
/// over X on the interface plane. Coarse-to-fine grid search, no Snell.
fn fermat_point(p: &Vector3<f64>, iface: &FlatInterface) -> Vector3<f64> {
    let n = iface.normal();
    let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (a - n * n.dot(&a)).normalize();
    let e2 = n.cross(&e1);
    let base = n * iface.distance;
    // Optical length change for a step dx away from x0, in a
    // cancellation-free form: |a + dx| - |a| = dx.(2a + dx) / (|a + dx| + |a|)
    let grow = |a: Vector3<f64>, dx: Vector3<f64>| dx.dot(&(2.0 * a + dx)) / ((a + dx).norm() + a.norm());
    let mut x0 = base;
    let mut half = p.norm();
    for _ in 0..200 {
        let mut best = (0.0, Vector3::zeros());
        for i in -10..=10 {
            for j in -10..=10 {
                let dx = e1 * (half * i as f64 / 10.0) + e2 * (half * j as f64 / 10.0);
                let l = grow(x0, dx) + grow(p - x0, -dx) / iface.eta;
                if l < best.0 {
                    best = (l, dx);
                }
            }
        }
        x0 += best.1;
        half *= 0.5;
    }
    x0
}

#[test]
fn projection_agrees_with_fermat_search() {
    let cam = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..40 {
        let tilt = if k % 2 == 0 { 0.0 } else { 0.15 };
        let phi: f64 = rng.random_range(-3.0..3.0);
        let normal = [tilt * phi.cos(), tilt * phi.sin(), (1.0 - tilt * tilt).sqrt()];
        let iface = FlatInterface { normal, distance: rng.random_range(0.02..0.1), eta: WATER };
        let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.25..0.25), rng.random_range(0.2..1.0));
        let fast = project_through_interface(&p, &cam, &iface).unwrap();
        let oracle = cam.project(&fermat_point(&p, &iface)).unwrap();
        let err = ((fast.0 - oracle.0).powi(2) + (fast.1 - oracle.1).powi(2)).sqrt();
        assert!(err < 1e-6, "point {p:?}: {err} px");
    }
}

fn error_curve(d0: f64) -> (DepthCalibration, Vec<ErrorSample>) {
    let cam = camera();
    let iface = FlatInterface::frontal(d0, WATER);
    let calib = fit_depth_calibration(&cam, &iface, 0.6, CalibrationGrid::default()).unwrap();
    let lo = (d0 + 0.01f64).max(0.1);
    let n = ((1.0 - lo) / 0.01).round() as usize + 1;
    let curve = approximation_error_curve(&calib, &iface, &cam, &depth_range(lo, 1.0, n), &CalibrationGrid::default()).unwrap();
    (calib, curve)
}

#[test]
fn approximation_error_is_smallest_at_calibration_depth() {
    for d0 in [0.02, 0.05, 0.10] {
        let (calib, curve) = error_curve(d0);
        let best = curve.iter().min_by(|a, b| a.max_rel.total_cmp(&b.max_rel)).unwrap();
        assert!((best.depth - 0.6).abs() <= 0.01 + 1e-9, "d0 {d0}: minimum at {}", best.depth);
        assert!(calib.residual < 0.05, "d0 {d0}: residual {}", calib.residual);
        // grows away from the minimum outside a small neighborhood
        let i = curve.iter().position(|s| s == best).unwrap();
        for w in curve[..i.saturating_sub(2)].windows(2) {
            assert!(w[0].max_rel >= w[1].max_rel, "d0 {d0}: not decreasing toward calibration depth at {}", w[0].depth);
        }
        for w in curve[(i + 2).min(curve.len())..].windows(2) {
            assert!(w[1].max_rel >= w[0].max_rel, "d0 {d0}: not increasing past calibration depth at {}", w[1].depth);
        }
    }
}

#[test]
fn approximation_error_bound_for_small_ports() {
    for d0 in [0.02, 0.05] {
        let (_, curve) = error_curve(d0);
        let worst = curve.iter().map(|s| s.max_rel).fold(0.0, f64::max);
        assert!(worst < 0.008, "d0 {d0}: {worst}");
    }
}

#[test]
fn unit_ratio_curve_is_flat_zero() {
    let cam = camera();
    let iface = FlatInterface::frontal(0.05, 1.0);
    let calib = fit_depth_calibration(&cam, &iface, 0.6, CalibrationGrid::default()).unwrap();
    let curve = approximation_error_curve(&calib, &iface, &cam, &depth_range(0.1, 1.0, 10), &CalibrationGrid::default()).unwrap();
    assert!(curve.iter().all(|s| s.max_rel < 1e-9));
}

fn lens() -> CameraModel {
    CameraModel { k1: -0.25, k2: 0.06, p1: 5e-4, p2: -3e-4, ..CameraModel::pinhole(300.0, 300.0, 160.0, 120.0, 320, 240) }
}

const CELL: f64 = 20.0;

/// Checkerboard with soft edges so bilinear resampling stays sub-pixel exact.
fn checkerboard(w: usize, h: usize) -> Image {
    let soft = |t: f64| ((std::f64::consts::PI * t / CELL).sin() * 4.0).tanh();
    Image::from_fn(w, h, |x, y| 0.5 + 0.5 * soft(x as f64 + 0.5) * soft(y as f64 + 0.5))
}

/// Sub-pixel column where row `y` changes sign around 0.5 near `x0`.
fn edge_crossing(img: &Image, valid: &Mask, y: usize, x0: f64) -> Option<f64> {
    let lo = (x0 - 4.0).max(0.0) as usize;
    let hi = ((x0 + 4.0) as usize).min(img.width() - 2);
    for x in lo..=hi {
        if !valid.get(x, y) || !valid.get(x + 1, y) {
            return None;
        }
        let (a, b) = (img.get(x, y) - 0.5, img.get(x + 1, y) - 0.5);
        if a.abs() > 0.05 && b.abs() > 0.05 && a.signum() != b.signum() {
            return Some(x as f64 + a / (a - b));
        }
    }
    None
}

fn line_fit_residual(pts: &[(f64, f64)]) -> f64 {
    // fit x = a + b y
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.1 - my) * (p.0 - mx)).sum();
    let b = sxy / syy;
    pts.iter().map(|p| (p.0 - mx - b * (p.1 - my)).abs()).fold(0.0, f64::max)
}

#[test]
fn checkerboard_lines_straighten_after_round_trip() {
    let cam = lens();
    let ideal = checkerboard(cam.width, cam.height);
    let (distorted, _) = distort_image(&ideal, &cam);
    let (restored, valid) = undistort_image(&distorted, &cam);
    let mut worst: f64 = 0.0;
    let mut lines = 0;
    for k in 2..15 {
        let x0 = k as f64 * CELL - 0.5;
        let pts: Vec<(f64, f64)> = (20..220)
            .filter(|y| ((*y as f64 + 0.5) % CELL - CELL / 2.0).abs() < CELL / 2.0 - 4.0)
            .filter_map(|y| edge_crossing(&restored, &valid, y, x0).map(|x| (x, y as f64)))
            .collect();
        if pts.len() > 50 {
            worst = worst.max(line_fit_residual(&pts));
            lines += 1;
        }
    }
    assert!(lines >= 8, "only {lines} lines measured");
    assert!(worst < 0.3, "line residual {worst}");
}

#[test]
fn round_trip_resampling_keeps_smooth_images() {
    let cam = lens();
    let smooth = Image::from_fn(cam.width, cam.height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.2 * (x / 40.0).sin() * (y / 50.0).cos() + 0.15 * ((x + y) / 70.0).sin()
    });
    let (d, dv) = distort_image(&smooth, &cam);
    let (r, rv) = undistort_image(&d, &cam);
    let mut both = rv.clone();
    for y in 0..cam.height {
        for x in 0..cam.width {
            if !rv.get(x, y) {
                continue;
            }
            let (u, v) = cam.distort_pixel(x as f64, y as f64);
            // every bilinear tap must come from a valid distorted pixel
            let (x0, y0) = (u.floor() as isize, v.floor() as isize);
            let inside = x0 >= 0 && y0 >= 0 && ((x0 + 1) as usize) < cam.width && ((y0 + 1) as usize) < cam.height;
            let taps_valid = inside
                && [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(dx, dy)| dv.get(x0 as usize + dx, y0 as usize + dy));
            both.set(x, y, taps_valid);
        }
    }
    let p = psnr_masked(&r, &smooth, |x, y| both.get(x, y));
    assert!(p > 40.0, "psnr {p}");
}
