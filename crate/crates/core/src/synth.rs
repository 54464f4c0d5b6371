//! Built-in procedural scenes and a ray caster that renders them through
//! optional flat ports and a virtual pattern projector.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::optics::{trace_pixel, CameraModel, FlatInterface};
use crate::restoration::{synth_bubbles, BubbleField, BubbleProfile, ProjectedPattern};
use crate::rig::StereoRig;

/// Solid (3D) texture so both views see the same surface detail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    Constant(f64),
    /// Multi-octave value noise with base cell size `cell` meters.
    Noise { cell: f64, seed: u64, mean: f64, contrast: f64 },
}

fn hash(i: i64, j: i64, k: i64, seed: u64) -> f64 {
    let mut z = seed
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (k as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: Vector3<f64>, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let t = (p - f).map(|v| v * v * (3.0 - 2.0 * v));
    let (i, j, k) = (f.x as i64, f.y as i64, f.z as i64);
    let mut acc = 0.0;
    for c in 0..8 {
        let (a, b, d) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        let w = (if a == 1 { t.x } else { 1.0 - t.x }) * (if b == 1 { t.y } else { 1.0 - t.y }) * (if d == 1 { t.z } else { 1.0 - t.z });
        acc += w * hash(i + a, j + b, k + d, seed);
    }
    acc
}

impl Texture {
    pub fn value(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Texture::Constant(v) => v,
            Texture::Noise { cell, seed, mean, contrast } => {
                let mut n = 0.0;
                for (octave, weight) in [(1.0, 0.5), (2.0, 0.3), (4.0, 0.2)] {
                    n += weight * value_noise(p * (octave / cell), seed.wrapping_add(octave as u64));
                }
                (mean + contrast * 2.0 * (n - 0.5)).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Fronto-parallel rectangle at depth `z` (the face of a step).
    Rect { z: f64, x: (f64, f64), y: (f64, f64) },
}

impl Shape {
    /// Ray parameter of the nearest hit in front of the origin.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Plane { point, normal } => {
                let den = normal.dot(d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(point - o)) / den;
                (t > 1e-9).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - d.norm_squared() * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let a = d.norm_squared();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 1e-9)
            }
            Shape::Rect { z, x, y } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let t = (z - o.z) / d.z;
                let p = o + t * d;
                (t > 1e-9 && p.x >= x.0 && p.x <= x.1 && p.y >= y.0 && p.y <= y.1).then_some(t)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub texture: Texture,
    /// Counts as foreground for segmentation masks.
    pub target: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vector3<f64>,
    pub object: usize,
}

impl Scene {
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some(t) = obj.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i));
                }
            }
        }
        best.map(|(t, i)| Hit { point: o + t * d, object: i })
    }

    fn fronto_plane(z: f64, texture: Texture, target: bool) -> SceneObject {
        SceneObject { shape: Shape::Plane { point: Vector3::new(0.0, 0.0, z), normal: Vector3::z() }, texture, target }
    }

    /// Fronto-parallel plane with fine noise texture, the whole view a target.
    pub fn textured_plane(z: f64, seed: u64) -> Self {
        Self { objects: vec![Self::fronto_plane(z, Texture::Noise { cell: 0.004, seed, mean: 0.5, contrast: 0.4 }, true)] }
    }

    /// Uniform-albedo plane: nothing to match without a projected pattern.
    pub fn textureless_plane(z: f64) -> Self {
        Self { objects: vec![Self::fronto_plane(z, Texture::Constant(0.45), true)] }
    }

    /// Background plane with a raised rectangular step in front of it.
    pub fn step(z_back: f64, z_front: f64, half_width: f64, seed: u64) -> Self {
        let tex = |s| Texture::Noise { cell: 0.004, seed: s, mean: 0.5, contrast: 0.4 };
        Self {
            objects: vec![
                Self::fronto_plane(z_back, tex(seed), false),
                SceneObject { shape: Shape::Rect { z: z_front, x: (-half_width, half_width), y: (-half_width, half_width) }, texture: tex(seed + 1), target: true },
            ],
        }
    }

    pub fn sphere_on_plane(z_back: f64, center: Vector3<f64>, radius: f64, seed: u64) -> Self {
        let tex = |s| Texture::Noise { cell: 0.004, seed: s, mean: 0.5, contrast: 0.4 };
        Self {
            objects: vec![
                Self::fronto_plane(z_back, tex(seed), false),
                SceneObject { shape: Shape::Sphere { center, radius }, texture: tex(seed + 1), target: true },
            ],
        }
    }

    /// Random tilted background with a few textured spheres and steps as
    /// targets, all between `near` and `far` meters, inside the view
    /// cone of half-angle tangent `fov_tan`.
    pub fn random(seed: u64, near: f64, far: f64, fov_tan: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = |rng: &mut ChaCha8Rng| rng.random_range(0.002..0.006);
        let mut objects = Vec::new();
        let tilt = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
        objects.push(SceneObject {
            shape: Shape::Plane { point: Vector3::new(0.0, 0.0, far), normal: tilt },
            texture: Texture::Noise { cell: cell(&mut rng), seed: rng.random(), mean: rng.random_range(0.35..0.55), contrast: rng.random_range(0.2..0.4) },
            target: false,
        });
        for _ in 0..rng.random_range(1..4) {
            let z = rng.random_range(near..0.5 * (near + far));
            let span = fov_tan * z * 0.7;
            let (cx, cy) = (rng.random_range(-span..span), rng.random_range(-span..span));
            let size = rng.random_range(0.15..0.35) * fov_tan * z;
            let shape = if rng.random_bool(0.5) {
                Shape::Sphere { center: Vector3::new(cx, cy, z + size), radius: size }
            } else {
                Shape::Rect { z, x: (cx - size, cx + size), y: (cy - size, cy + size) }
            };
            objects.push(SceneObject {
                shape,
                texture: Texture::Noise { cell: cell(&mut rng), seed: rng.random(), mean: rng.random_range(0.45..0.7), contrast: rng.random_range(0.25..0.45) },
                target: true,
            });
        }
        Self { objects }
    }
}

/// One camera for rendering: model, center in the rig frame (axes parallel
/// to the rig frame), and an optional flat port.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub camera: &'a CameraModel,
    pub center: Vector3<f64>,
    pub interface: Option<&'a FlatInterface>,
}

pub struct Rendering {
    pub image: Image,
    /// Depth (z relative to the view center) of the surface seen at each
    /// pixel center; `-inf` where the ray escapes.
    pub depth: Image,
    pub target: Mask,
}

impl View<'_> {
    pub fn ray(&self, u: f64, v: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
        match self.interface {
            Some(iface) => {
                let (o, d) = trace_pixel(self.camera, iface, u, v)?;
                Ok((self.center + o, d))
            }
            None => Ok((self.center, self.camera.ray(u, v))),
        }
    }
}

const SUPERSAMPLE: [f64; 2] = [-0.25, 0.25];

/// Ray-casts `scene` with 2x2 supersampling; the pattern, when present, is
/// added to the surface albedo and the sum clamped to [0, 1].
pub fn render(scene: &Scene, view: &View, pattern: Option<&ProjectedPattern>) -> Result<Rendering> {
    if let Some(p) = pattern {
        p.validate()?;
    }
    let (w, h) = (view.camera.width, view.camera.height);
    let mut image = Image::new(w, h);
    let mut depth = Image::filled(w, h, f64::NEG_INFINITY);
    let mut target = Mask::new(w, h, false);
    let shade = |hit: &Hit| {
        let obj = &scene.objects[hit.object];
        let mut v = obj.texture.value(&hit.point);
        if let Some(p) = pattern {
            if let Some((s, t)) = p.projector_pixel(&hit.point) {
                v += p.value_at(s, t);
            }
        }
        v.clamp(0.0, 1.0)
    };
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64, y as f64);
            let (o, d) = view.ray(u, v)?;
            if let Some(hit) = scene.cast(&o, &d) {
                depth.set(x, y, hit.point.z - view.center.z);
                target.set(x, y, scene.objects[hit.object].target);
            }
            let mut acc = 0.0;
            for dy in SUPERSAMPLE {
                for dx in SUPERSAMPLE {
                    let (o, d) = view.ray(u + dx, v + dy)?;
                    acc += scene.cast(&o, &d).map(|hit| shade(&hit)).unwrap_or(0.0);
                }
            }
            image.set(x, y, acc / 4.0);
        }
    }
    Ok(Rendering { image, depth, target })
}

/// Rendered stereo pair with left-view ground truth.
pub struct StereoRendering {
    pub left: Image,
    pub right: Image,
    /// Ideal rectified disparity at each left pixel; `-inf` where no
    /// surface is hit or the point is hidden from the right camera.
    pub disparity: Image,
    pub left_depth: Image,
    pub right_depth: Image,
    pub target: Mask,
}

/// Renders a rectified (distortion-free, identity-rotation) rig in air, or
/// its raw views behind `interface` when one is given. Disparity ground
/// truth refers to the in-air rectified geometry.
pub fn render_stereo(
    scene: &Scene,
    rig: &StereoRig,
    interface: Option<&FlatInterface>,
    pattern: Option<&ProjectedPattern>,
) -> Result<StereoRendering> {
    if rig.left.has_distortion() || rig.right.has_distortion() || (rig.rotation - nalgebra::Matrix3::identity()).abs().max() > 1e-12 {
        return Err(Error::InvalidArgument("render_stereo needs an undistorted, already rectified rig".into()));
    }
    let left_view = View { camera: &rig.left, center: Vector3::zeros(), interface };
    let right_view = View { camera: &rig.right, center: rig.translation, interface };
    let l = render(scene, &left_view, pattern)?;
    let r = render(scene, &right_view, pattern)?;
    let c = &rig.rectified;
    let right_center = Vector3::new(rig.baseline, 0.0, 0.0);
    let disparity = Image::from_fn(c.width, c.height, |x, y| {
        let z = l.depth.get(x, y);
        if !(z > 0.0) {
            return f64::NEG_INFINITY;
        }
        let p = z * Vector3::new((x as f64 - c.cx) / c.fx, (y as f64 - c.cy) / c.fy, 1.0);
        let d = c.fx * rig.baseline / z;
        match scene.cast(&right_center, &(p - right_center)) {
            Some(hit) if (hit.point - p).norm() < 1e-6 * z => d,
            _ => f64::NEG_INFINITY,
        }
    });
    Ok(StereoRendering { left: l.image, right: r.image, disparity, left_depth: l.depth, right_depth: r.depth, target: l.target })
}

/// Random scene seen by a small rectified rig, optionally with independent
/// bubble fields over each view.
pub struct StereoSample {
    pub left: Image,
    pub right: Image,
    pub clean_left: Image,
    pub clean_right: Image,
    /// Ground-truth disparity at left pixels, `-inf` where unknown.
    pub disparity: Image,
    pub target: Mask,
}

/// Rig used for [`random_stereo_sample`]: focal length `1.25 * width`,
/// 5 cm baseline; scene depths 0.35 to 0.9 m.
pub fn sample_rig(width: usize, height: usize) -> Result<StereoRig> {
    let f = 1.25 * width as f64;
    let cam = CameraModel::pinhole(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height);
    StereoRig::rectified_pair(cam, 0.05)
}

pub fn random_stereo_sample(seed: u64, width: usize, height: usize, bubbles: Option<BubbleProfile>) -> Result<StereoSample> {
    let rig = sample_rig(width, height)?;
    let scene = Scene::random(seed, 0.35, 0.9, 0.5 * width as f64 / rig.rectified.fx);
    let r = render_stereo(&scene, &rig, None, None)?;
    let (left, right) = match bubbles {
        Some(profile) => {
            let seed = seed.wrapping_mul(0x2545_F491_4F6C_DD1D);
            (
                synth_bubbles(&r.left, &BubbleField::random(profile, width, height, seed))?,
                synth_bubbles(&r.right, &BubbleField::random(profile, width, height, seed ^ 1))?,
            )
        }
        None => (r.left.clone(), r.right.clone()),
    };
    Ok(StereoSample { left, right, clean_left: r.left, clean_right: r.right, disparity: r.disparity, target: r.target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_disparity_matches_formula() {
        let cam = CameraModel::pinhole(300.0, 300.0, 32.0, 24.0, 64, 48);
        let rig = StereoRig::rectified_pair(cam, 0.1).unwrap();
        let r = render_stereo(&Scene::textured_plane(0.6, 1), &rig, None, None).unwrap();
        assert!(r.disparity.data().iter().all(|&d| (d - 50.0).abs() < 1e-9));
        assert!(r.left.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r.target.count(), 64 * 48);
    }

    #[test]
    fn right_view_is_shifted_left_view() {
        // integer disparity: right(x - d) sees the same surface as left(x)
        let cam = CameraModel::pinhole(300.0, 300.0, 32.0, 24.0, 64, 48);
        let rig = StereoRig::rectified_pair(cam, 0.1).unwrap();
        let r = render_stereo(&Scene::textured_plane(0.6, 2), &rig, None, None).unwrap();
        for y in 0..48 {
            for x in 50..64 {
                assert!((r.left.get(x, y) - r.right.get(x - 50, y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn step_occludes_background() {
        let cam = CameraModel::pinhole(300.0, 300.0, 32.0, 24.0, 64, 48);
        let rig = StereoRig::rectified_pair(cam, 0.05).unwrap();
        let r = render_stereo(&Scene::step(0.8, 0.5, 0.03, 3), &rig, None, None).unwrap();
        assert!((r.disparity.get(32, 24) - 30.0).abs() < 1e-9);
        assert!(r.target.get(32, 24) && !r.target.get(2, 2));
        // background just left of the step is hidden from the right camera
        assert!(r.disparity.data().iter().any(|d| *d == f64::NEG_INFINITY));
    }
}
