//! Zero-mean normalized cross-correlation block matching.

use super::volume::{best_two, parabola_offset, DisparityMap, DisparityRange};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatchOptions {
    /// Odd window extent.
    pub window: usize,
    /// Maximum allowed difference between left- and right-referenced disparities.
    pub lr_tolerance: f64,
    /// Windows whose intensity deviation falls below this are unmatchable.
    pub min_deviation: f64,
}

impl Default for BlockMatchOptions {
    fn default() -> Self {
        Self { window: 9, lr_tolerance: 1.0, min_deviation: 0.01 }
    }
}

// Windowed mean and deviation from summed-area tables.
struct WindowStats {
    width: usize,
    half: usize,
    mean: Vec<f64>,
    dev: Vec<f64>,
}

impl WindowStats {
    fn new(img: &Image, window: usize) -> Self {
        let (w, h) = img.dims();
        let half = window / 2;
        let mut s1 = vec![0.0; (w + 1) * (h + 1)];
        let mut s2 = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y);
                let i = (y + 1) * (w + 1) + x + 1;
                s1[i] = v + s1[i - 1] + s1[i - w - 1] - s1[i - w - 2];
                s2[i] = v * v + s2[i - 1] + s2[i - w - 1] - s2[i - w - 2];
            }
        }
        let n = (window * window) as f64;
        let mut mean = vec![f64::NAN; w * h];
        let mut dev = vec![0.0; w * h];
        for y in half..h.saturating_sub(half) {
            for x in half..w.saturating_sub(half) {
                let (x0, y0, x1, y1) = (x - half, y - half, x + half + 1, y + half + 1);
                let rect = |s: &[f64]| s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
                let m = rect(&s1) / n;
                mean[y * w + x] = m;
                dev[y * w + x] = (rect(&s2) / n - m * m).max(0.0).sqrt();
            }
        }
        Self { width: w, half, mean, dev }
    }

    fn inside(&self, x: usize, y: usize) -> bool {
        self.mean[y * self.width + x].is_finite()
    }
}

fn zncc(l: &Image, ls: &WindowStats, r: &Image, rs: &WindowStats, xl: usize, xr: usize, y: usize, min_dev: f64) -> f64 {
    let w = ls.width;
    let (dl, dr) = (ls.dev[y * w + xl], rs.dev[y * w + xr]);
    if dl < min_dev || dr < min_dev {
        return f64::NEG_INFINITY;
    }
    let half = ls.half;
    let mut cross = 0.0;
    for yy in y - half..=y + half {
        let (lr, rr) = (l.row(yy), r.row(yy));
        cross += lr[xl - half..=xl + half].iter().zip(&rr[xr - half..=xr + half]).map(|(a, b)| a * b).sum::<f64>();
    }
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    (cross / n - ls.mean[y * w + xl] * rs.mean[y * w + xr]) / (dl * dr)
}

/// Classical matcher used as the non-learned comparator. A pixel survives
/// when its window has contrast, its best match is unique under the
/// right-referenced search within `lr_tolerance`, and the window fits inside
/// both images.
pub fn baseline_block_match(
    left: &Image,
    right: &Image,
    mask: Option<&Mask>,
    options: &BlockMatchOptions,
    range: DisparityRange,
) -> Result<DisparityMap> {
    let (w, h) = left.dims();
    if right.dims() != (w, h) {
        return Err(Error::Shape(format!("left {w}x{h} vs right {:?}", right.dims())));
    }
    if let Some(m) = mask {
        if m.dims() != (w, h) {
            return Err(Error::Shape(format!("mask {:?} vs image {w}x{h}", m.dims())));
        }
    }
    let win = options.window;
    if win % 2 == 0 || win == 0 {
        return Err(Error::InvalidArgument(format!("window extent must be odd, got {win}")));
    }
    if win > w || win > h {
        return Err(Error::InvalidArgument(format!("window {win} larger than the {w}x{h} image")));
    }
    range.check_width(w)?;
    let ls = WindowStats::new(left, win);
    let rs = WindowStats::new(right, win);
    let n = range.count();
    let mut map = DisparityMap::invalid(w, h);
    let mut col = vec![f64::NEG_INFINITY; n];
    let mut back = vec![f64::NEG_INFINITY; n];
    for y in 0..h {
        for x in 0..w {
            if mask.is_some_and(|m| !m.get(x, y)) || !ls.inside(x, y) || ls.dev[y * w + x] < options.min_deviation {
                continue;
            }
            for (k, c) in col.iter_mut().enumerate() {
                let d = range.min + k;
                *c = if d <= x && rs.inside(x - d, y) {
                    zncc(left, &ls, right, &rs, x, x - d, y, options.min_deviation)
                } else {
                    f64::NEG_INFINITY
                };
            }
            let Some((best, second)) = best_two(&col) else { continue };
            let xr = x - (range.min + best);
            // right-referenced search from the matched right pixel
            for (k, c) in back.iter_mut().enumerate() {
                let xl = xr + range.min + k;
                *c = if xl < w && ls.inside(xl, y) {
                    zncc(left, &ls, right, &rs, xl, xr, y, options.min_deviation)
                } else {
                    f64::NEG_INFINITY
                };
            }
            let Some((rbest, _)) = best_two(&back) else { continue };
            if (best as f64 - rbest as f64).abs() > options.lr_tolerance {
                continue;
            }
            let d = (range.min + best) as f64 + parabola_offset(&col, best);
            map.set(x, y, d.clamp(range.min as f64, range.max as f64), second.map_or(0.0, |s| col[best] - s));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (0.9 * x + 0.3 * y).sin() + 0.15 * (0.37 * x * x.sqrt() - 1.3 * y).cos() + 0.1 * (2.1 * x + 1.7 * y).sin()
    }

    #[test]
    fn recovers_a_constructed_shift() {
        let l = Image::from_fn(60, 30, |x, y| texture(x as f64, y as f64));
        let r = Image::from_fn(60, 30, |x, y| texture(x as f64 + 5.0, y as f64));
        let m = baseline_block_match(&l, &r, None, &BlockMatchOptions::default(), DisparityRange::new(0, 12).unwrap())
            .unwrap();
        let mut hits = 0;
        let mut total = 0;
        for y in 4..26 {
            for x in 20..56 {
                total += 1;
                if m.get(x, y).is_some_and(|d| (d - 5.0).abs() < 0.5) {
                    hits += 1;
                }
            }
        }
        assert_eq!(hits, total);
    }

    #[test]
    fn constant_region_is_invalid() {
        let img = Image::filled(30, 20, 0.4);
        let m = baseline_block_match(&img, &img, None, &BlockMatchOptions::default(), DisparityRange::new(0, 5).unwrap())
            .unwrap();
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let img = Image::filled(8, 8, 0.4);
        let opts = BlockMatchOptions { window: 9, ..Default::default() };
        assert!(baseline_block_match(&img, &img, None, &opts, DisparityRange::new(0, 2).unwrap()).is_err());
    }

    #[test]
    fn output_stays_inside_the_mask() {
        let l = Image::from_fn(40, 20, |x, y| texture(x as f64, y as f64));
        let r = Image::from_fn(40, 20, |x, y| texture(x as f64 + 3.0, y as f64));
        let mask = Mask::from_fn(40, 20, |x, _| x % 3 == 0);
        let m = baseline_block_match(&l, &r, Some(&mask), &BlockMatchOptions::default(), DisparityRange::new(0, 6).unwrap())
            .unwrap();
        assert!(m.valid_count() > 0);
        for y in 0..20 {
            for x in 0..40 {
                if m.get(x, y).is_some() {
                    assert!(mask.get(x, y));
                }
            }
        }
    }
}
