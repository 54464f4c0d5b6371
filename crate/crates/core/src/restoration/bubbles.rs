use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Reference tile for the density table.
const TILE_AREA: f64 = 512.0 * 512.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BubbleDistance {
    Near,
    Far,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BubbleAmount {
    Little,
    Much,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BubbleProfile {
    pub distance: BubbleDistance,
    pub amount: BubbleAmount,
}

impl BubbleProfile {
    pub const FAR_LITTLE: Self = Self { distance: BubbleDistance::Far, amount: BubbleAmount::Little };
    pub const FAR_MUCH: Self = Self { distance: BubbleDistance::Far, amount: BubbleAmount::Much };
    pub const NEAR_LITTLE: Self = Self { distance: BubbleDistance::Near, amount: BubbleAmount::Little };
    pub const NEAR_MUCH: Self = Self { distance: BubbleDistance::Near, amount: BubbleAmount::Much };

    /// Bubbles per 512x512 tile.
    pub fn count_per_tile(&self) -> usize {
        match self.amount {
            BubbleAmount::Little => 10,
            BubbleAmount::Much => 60,
        }
    }

    /// Radius range in pixels.
    pub fn radius_range(&self) -> (f64, f64) {
        match self.distance {
            BubbleDistance::Near => (12.0, 36.0),
            BubbleDistance::Far => (3.0, 10.0),
        }
    }

    /// Count for an image of the given extents, scaled by area.
    pub fn count_for(&self, width: usize, height: usize) -> usize {
        (self.count_per_tile() as f64 * (width * height) as f64 / TILE_AREA).round() as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "far-little" => Self::FAR_LITTLE,
            "far-much" => Self::FAR_MUCH,
            "near-little" => Self::NEAR_LITTLE,
            "near-much" => Self::NEAR_MUCH,
            _ => return Err(Error::Config(format!("unknown bubble profile `{s}` (far|near)-(little|much)"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bubble {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Central magnification is `1 / (1 - strength)`.
    pub strength: f64,
    pub highlight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BubbleField {
    pub bubbles: Vec<Bubble>,
}

impl BubbleField {
    pub fn random(profile: BubbleProfile, width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rmin, rmax) = profile.radius_range();
        let bubbles = (0..profile.count_for(width, height))
            .map(|_| Bubble {
                cx: rng.random_range(0.0..width as f64),
                cy: rng.random_range(0.0..height as f64),
                radius: rng.random_range(rmin..rmax),
                strength: rng.random_range(0.25..0.6),
                highlight: rng.random_range(0.3..0.8),
            })
            .collect();
        Self { bubbles }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bubbles {
            if !(b.radius > 0.0) || !(0.0..1.0).contains(&b.strength) {
                return Err(Error::InvalidArgument(format!("invalid bubble {b:?}")));
            }
        }
        Ok(())
    }
}

impl Bubble {
    /// Source offset for a pixel at offset `(dx, dy)` from the center, or
    /// `None` outside the bubble. Content inside is magnified, smoothly
    /// returning to identity at the rim.
    pub fn source_offset(&self, dx: f64, dy: f64) -> Option<(f64, f64)> {
        let r = (dx * dx + dy * dy).sqrt();
        if r >= self.radius {
            return None;
        }
        let t = r / self.radius;
        let scale = 1.0 - self.strength * (1.0 - t * t).powi(2);
        Some((dx * scale, dy * scale))
    }

    fn highlight_at(&self, dx: f64, dy: f64) -> f64 {
        let s = 0.25 * self.radius;
        let (hx, hy) = (dx + 0.35 * self.radius, dy + 0.35 * self.radius);
        self.highlight * (-(hx * hx + hy * hy) / (2.0 * s * s)).exp()
    }
}

/// Renders bubbles over `clean` in field order. Pixels outside every bubble
/// are copied unchanged.
pub fn synth_bubbles(clean: &Image, field: &BubbleField) -> Result<Image> {
    field.validate()?;
    let mut img = clean.clone();
    for b in &field.bubbles {
        let src = img.clone();
        let x0 = (b.cx - b.radius).floor().max(0.0) as usize;
        let y0 = (b.cy - b.radius).floor().max(0.0) as usize;
        let x1 = ((b.cx + b.radius).ceil() as usize).min(img.width().saturating_sub(1));
        let y1 = ((b.cy + b.radius).ceil() as usize).min(img.height().saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - b.cx, y as f64 - b.cy);
                let Some((sx, sy)) = b.source_offset(dx, dy) else { continue };
                let (u, v) = (b.cx + sx, b.cy + sy);
                let base = src.bilinear(u, v).unwrap_or_else(|| src.get_clamped(u.round() as isize, v.round() as isize));
                img.set(x, y, (base + b.highlight_at(dx, dy)).clamp(0.0, 1.0));
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_field_is_identity() {
        let img = Image::from_fn(20, 10, |x, y| (x * y) as f64 / 200.0);
        assert_eq!(synth_bubbles(&img, &BubbleField::default()).unwrap(), img);
    }

    #[test]
    fn displacement_is_radially_symmetric() {
        let b = Bubble { cx: 0.0, cy: 0.0, radius: 10.0, strength: 0.5, highlight: 0.5 };
        for k in 0..100 {
            let r = 9.9 * k as f64 / 100.0;
            let reference = b.source_offset(r, 0.0).unwrap().0;
            for a in 0..16 {
                let th = a as f64 * std::f64::consts::TAU / 16.0;
                let (sx, sy) = b.source_offset(r * th.cos(), r * th.sin()).unwrap();
                assert!(((sx * sx + sy * sy).sqrt() - reference).abs() < 1e-6);
                assert!((sx * th.sin() - sy * th.cos()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn profile_table() {
        assert_eq!(BubbleProfile::NEAR_MUCH.count_for(512, 512), 60);
        assert_eq!(BubbleProfile::FAR_LITTLE.count_for(256, 256), 3);
        assert_eq!(BubbleProfile::parse("near-much").unwrap(), BubbleProfile::NEAR_MUCH);
        assert!(BubbleProfile::parse("medium").is_err());
        let f = BubbleField::random(BubbleProfile::FAR_MUCH, 512, 512, 3);
        assert_eq!(f.bubbles.len(), 60);
        assert!(f.bubbles.iter().all(|b| (3.0..10.0).contains(&b.radius)));
        assert_eq!(f, BubbleField::random(BubbleProfile::FAR_MUCH, 512, 512, 3));
    }
}
