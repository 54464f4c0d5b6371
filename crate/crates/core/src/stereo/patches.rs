//! Patch extraction and the two branch inputs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{kernels, Tensor};

/// Splits `N x 1 x P x P` patches into the wide-field input (2x2 max pool)
/// and the narrow-field input (central `P/2` crop).
pub fn extract_branches(patch: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = patch.dims4()?;
    if h != w {
        return Err(Error::Shape(format!("patches must be square, got {h}x{w}")));
    }
    if h % 2 != 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("patch extent must be even, got {h}")));
    }
    let (low, _) = kernels::maxpool2x2(patch)?;
    let high = kernels::crop(patch, h / 4, w / 4, h / 2, w / 2)?;
    Ok((low, high))
}

/// Zero-mean, unit-deviation copy of an image; matching runs on these.
pub fn standardize(img: &Image) -> Image {
    let n = img.data().len().max(1) as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    img.map(|v| (v - mean) * inv)
}

/// Whether the `p x p` patch owned by pixel `(x, y)` lies inside a `w x h`
/// image. The patch spans columns `x - p/2 .. x + p/2`.
pub fn patch_fits(x: usize, y: usize, p: usize, w: usize, h: usize) -> bool {
    x >= p / 2 && y >= p / 2 && x + p / 2 <= w && y + p / 2 <= h
}

/// Copies the patch owned by `(x, y)` into `out` (length `p * p`).
pub fn copy_patch(img: &Image, x: usize, y: usize, p: usize, out: &mut [f64]) {
    let (x0, y0) = (x - p / 2, y - p / 2);
    for r in 0..p {
        out[r * p..(r + 1) * p].copy_from_slice(&img.row(y0 + r)[x0..x0 + p]);
    }
}

/// Patch owned by `(x, y)` as a `1 x 1 x P x P` tensor, `None` across borders.
pub fn patch_at(img: &Image, x: usize, y: usize, p: usize) -> Option<Tensor> {
    if !patch_fits(x, y, p, img.width(), img.height()) {
        return None;
    }
    let mut data = vec![0.0; p * p];
    copy_patch(img, x, y, p, &mut data);
    Some(Tensor::new(&[1, 1, p, p], data).expect("patch shape"))
}

/// Photometric and geometric jitter applied when sampling training patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    /// Multiplicative gain drawn from `1 +- gain`.
    pub gain: f64,
    /// Additive offset drawn from `+- offset` (standardized units).
    pub offset: f64,
}

impl Augmentation {
    pub fn none() -> Self {
        Self { rotation_deg: 0.0, scale: (1.0, 1.0), gain: 0.0, offset: 0.0 }
    }
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { rotation_deg: 7.0, scale: (0.9, 1.1), gain: 0.2, offset: 0.2 }
    }
}

/// Geometric part of one augmentation draw, shared by all patches of an example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchWarp {
    pub angle: f64,
    pub scale: f64,
}

impl PatchWarp {
    pub const IDENTITY: PatchWarp = PatchWarp { angle: 0.0, scale: 1.0 };

    pub fn random(aug: &Augmentation, rng: &mut impl Rng) -> Self {
        let angle = if aug.rotation_deg > 0.0 {
            rng.random_range(-aug.rotation_deg..=aug.rotation_deg).to_radians()
        } else {
            0.0
        };
        let scale = if aug.scale.1 > aug.scale.0 { rng.random_range(aug.scale.0..=aug.scale.1) } else { aug.scale.0 };
        Self { angle, scale }
    }
}

/// Samples a `p x p` patch whose owner pixel sits at continuous `(x, y)`,
/// rotated and scaled about the patch center. With the identity warp and
/// integer coordinates this equals [`patch_at`].
pub fn sample_patch(img: &Image, x: f64, y: f64, p: usize, warp: PatchWarp) -> Option<Tensor> {
    let (c, s) = (warp.angle.cos() * warp.scale, warp.angle.sin() * warp.scale);
    // geometric center of the pixel block owned by (x, y)
    let (cx, cy) = (x - 0.5, y - 0.5);
    let half = p as f64 / 2.0;
    let mut data = Vec::with_capacity(p * p);
    for r in 0..p {
        for k in 0..p {
            let (dx, dy) = (k as f64 - half + 0.5, r as f64 - half + 0.5);
            let sx = cx + c * dx - s * dy;
            let sy = cy + s * dx + c * dy;
            data.push(img.bilinear(sx, sy)?);
        }
    }
    Some(Tensor::new(&[1, 1, p, p], data).expect("patch shape"))
}

/// Applies a random gain and offset.
pub fn jitter_brightness(patch: &mut Tensor, aug: &Augmentation, rng: &mut impl Rng) {
    let gain = if aug.gain > 0.0 { 1.0 + rng.random_range(-aug.gain..=aug.gain) } else { 1.0 };
    let offset = if aug.offset > 0.0 { rng.random_range(-aug.offset..=aug.offset) } else { 0.0 };
    patch.data_mut().iter_mut().for_each(|v| *v = *v * gain + offset);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch_gives_constant_branches() {
        let (low, high) = extract_branches(&Tensor::full(&[1, 1, 8, 8], 0.3)).unwrap();
        assert!(low.data().iter().chain(high.data()).all(|&v| v == 0.3));
    }

    #[test]
    fn four_pixel_patch_by_index() {
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let (low, high) = extract_branches(&Tensor::new(&[1, 1, 4, 4], vals).unwrap()).unwrap();
        // row-major 4x4: blocks {0,1,4,5} .. {10,11,14,15}
        assert_eq!(low.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(high.data(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn corner_impulse_reaches_only_the_wide_branch() {
        let mut center = Tensor::zeros(&[1, 1, 8, 8]);
        center.data_mut()[4 * 8 + 4] = 1.0;
        let (l, h) = extract_branches(&center).unwrap();
        assert_eq!(l.data().iter().sum::<f64>(), 1.0);
        assert_eq!(h.data().iter().sum::<f64>(), 1.0);
        let mut corner = Tensor::zeros(&[1, 1, 8, 8]);
        corner.data_mut()[0] = 1.0;
        let (l, h) = extract_branches(&corner).unwrap();
        assert_eq!(l.data().iter().sum::<f64>(), 1.0);
        assert_eq!(h.data().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(matches!(extract_branches(&Tensor::zeros(&[1, 1, 5, 5])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_sampling_equals_direct_copy() {
        let img = Image::from_fn(20, 14, |x, y| ((x * 7 + y * 13) % 11) as f64);
        let a = patch_at(&img, 9, 6, 8).unwrap();
        let b = sample_patch(&img, 9.0, 6.0, 8, PatchWarp::IDENTITY).unwrap();
        assert_eq!(a, b);
        assert!(patch_at(&img, 3, 6, 8).is_none());
        assert!(patch_at(&img, 16, 6, 8).is_some());
        assert!(patch_at(&img, 17, 6, 8).is_none());
    }
}
