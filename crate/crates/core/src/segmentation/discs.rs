//! Textured discs on a textured background, with exact target masks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Mask};
use crate::synth::Texture;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Renders discs over a coarse background texture. Targets are brighter on
/// average and carry finer texture, with overlapping intensity ranges.
pub fn render_discs(width: usize, height: usize, discs: &[Disc], seed: u64) -> (Image, Mask) {
    let bg = Texture::Noise { cell: 14.0, seed, mean: 0.38, contrast: 0.35 };
    let fg = Texture::Noise { cell: 4.0, seed: seed ^ 0x5a5a, mean: 0.62, contrast: 0.35 };
    let inside = |x: f64, y: f64| discs.iter().any(|d| (x - d.cx).powi(2) + (y - d.cy).powi(2) <= d.radius * d.radius);
    let mask = Mask::from_fn(width, height, |x, y| inside(x as f64, y as f64));
    let img = Image::from_fn(width, height, |x, y| {
        let p = Vector3::new(x as f64, y as f64, 0.0);
        if mask.get(x, y) { fg.value(&p) } else { bg.value(&p) }
    });
    (img, mask)
}

/// One to three discs with radii between 10% and 25% of the shorter side.
pub fn disc_scene(seed: u64, width: usize, height: usize) -> (Image, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = width.min(height) as f64;
    let discs: Vec<Disc> = (0..rng.random_range(1..=3))
        .map(|_| Disc {
            cx: rng.random_range(0.0..width as f64),
            cy: rng.random_range(0.0..height as f64),
            radius: rng.random_range(0.1 * short..0.25 * short),
        })
        .collect();
    render_discs(width, height, &discs, rng.random())
}

/// A single centered disc covering `fraction` of the image area.
pub fn disc_with_area(seed: u64, width: usize, height: usize, fraction: f64) -> (Image, Mask) {
    let radius = (fraction * (width * height) as f64 / std::f64::consts::PI).sqrt();
    let disc = Disc { cx: (width as f64 - 1.0) / 2.0, cy: (height as f64 - 1.0) / 2.0, radius };
    render_discs(width, height, &[disc], seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_fraction_is_respected() {
        let (_, m) = disc_with_area(1, 200, 160, 0.2);
        let f = m.count() as f64 / (200.0 * 160.0);
        assert!((f - 0.2).abs() < 0.01, "{f}");
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(disc_scene(4, 64, 48), disc_scene(4, 64, 48));
    }
}
