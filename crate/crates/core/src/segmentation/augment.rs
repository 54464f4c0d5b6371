//! Joint geometric augmentation of image/mask pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Output size as a multiple of the input size (originals included).
    pub factor: f64,
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    /// Maximum translation as a fraction of each extent.
    pub translation: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    /// 100 annotated pairs grow to 980.
    fn default() -> Self {
        Self { factor: 9.8, rotation_deg: 20.0, scale: (0.8, 1.2), translation: 0.1, seed: 5 }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { factor: 1.0, rotation_deg: 0.0, scale: (1.0, 1.0), translation: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor >= 1.0) || !self.factor.is_finite() {
            return Err(Error::Config(format!("augmentation factor must be at least 1, got {}", self.factor)));
        }
        if !(self.scale.0 > 0.0 && self.scale.1 >= self.scale.0) {
            return Err(Error::Config(format!("invalid scale range {:?}", self.scale)));
        }
        Ok(())
    }
}

/// Similarity transform about the image center, applied by inverse mapping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTransform {
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl JointTransform {
    pub fn random(policy: &AugmentPolicy, width: usize, height: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let angle = draw(-policy.rotation_deg, policy.rotation_deg).to_radians();
        let scale = draw(policy.scale.0, policy.scale.1);
        let t = policy.translation;
        let tx = draw(-t, t) * width as f64;
        let ty = draw(-t, t) * height as f64;
        Self { angle, scale, tx, ty }
    }

    /// Source position of output pixel `(x, y)`.
    fn source(&self, x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (dx, dy) = (x as f64 - cx - self.tx, y as f64 - cy - self.ty);
        let (c, s) = (self.angle.cos() / self.scale, self.angle.sin() / self.scale);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    }

    /// Bilinear resampling with edge replication.
    pub fn apply_image(&self, img: &Image) -> Image {
        let (w, h) = img.dims();
        Image::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            let (fx, fy) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - fx, sy - fy);
            let (ix, iy) = (fx as isize, fy as isize);
            let g = |dx, dy| img.get_clamped(ix + dx, iy + dy);
            (g(0, 0) * (1.0 - ax) + g(1, 0) * ax) * (1.0 - ay) + (g(0, 1) * (1.0 - ax) + g(1, 1) * ax) * ay
        })
    }

    /// Nearest-neighbour resampling; outside the source is background.
    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        let (w, h) = mask.dims();
        Mask::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            let (rx, ry) = (sx.round(), sy.round());
            rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h && mask.get(rx as usize, ry as usize)
        })
    }
}

/// Originals followed by jointly transformed copies, cycling through the
/// originals, until `round(n * factor)` pairs exist.
pub fn augment_dataset(data: &[(Image, Mask)], policy: &AugmentPolicy) -> Result<Vec<(Image, Mask)>> {
    policy.validate()?;
    let target = (data.len() as f64 * policy.factor).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut out: Vec<(Image, Mask)> = data.to_vec();
    let mut k = 0;
    while out.len() < target {
        let (img, mask) = &data[k % data.len()];
        let t = JointTransform::random(policy, img.width(), img.height(), &mut rng);
        out.push((t.apply_image(img), t.apply_mask(mask)));
        k += 1;
    }
    Ok(out)
}
