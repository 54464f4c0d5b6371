//! Static line plots as grayscale images, with axis extents printed in a
//! 3x5 pixel font.

use crate::image::Image;

const W: usize = 480;
const H: usize = 320;
const MARGIN: usize = 40;

fn glyph(c: char) -> Option<[u8; 5]> {
    // rows of 3 bits, top first
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [7, 5, 7, 4, 7],
        _ => return None,
    })
}

fn text(img: &mut Image, x: usize, y: usize, s: &str) {
    for (i, c) in s.chars().enumerate() {
        let Some(g) = glyph(c) else { continue };
        for (r, bits) in g.iter().enumerate() {
            for b in 0..3 {
                let (px, py) = (x + 4 * i + b, y + r);
                if bits >> (2 - b) & 1 == 1 && px < img.width() && py < img.height() {
                    img.set(px, py, 0.0);
                }
            }
        }
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn line(img: &mut Image, (x0, y0): (f64, f64), (x1, y1): (f64, f64), shade: f64) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.set(x as usize, y as usize, shade);
        }
    }
}

/// Plots each series (darker for earlier ones) over a shared frame.
/// Non-finite samples are skipped.
pub fn line_plot(series: &[Vec<(f64, f64)>]) -> Image {
    let mut img = Image::filled(W, H, 1.0);
    let finite = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        return img;
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| (MARGIN as f64 + (x - x_lo) / (x_hi - x_lo) * pw, (H - MARGIN) as f64 - (y - y_lo) / (y_hi - y_lo) * ph);
    let (l, r, t, b) = (MARGIN as f64, (W - MARGIN) as f64, MARGIN as f64, (H - MARGIN) as f64);
    for (a, c) in [((l, b), (r, b)), ((l, t), (l, b)), ((l, t), (r, t)), ((r, t), (r, b))] {
        line(&mut img, a, c, 0.0);
    }
    text(&mut img, MARGIN, H - MARGIN + 6, &label(x_lo));
    let xs = label(x_hi);
    text(&mut img, W - MARGIN - 4 * xs.len(), H - MARGIN + 6, &xs);
    text(&mut img, 2, H - MARGIN - 2, &label(y_lo));
    text(&mut img, 2, MARGIN - 2, &label(y_hi));
    for (k, s) in series.iter().enumerate() {
        let shade = (0.15 * k as f64).min(0.6);
        let pts: Vec<_> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| to_px(x, y)).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], shade);
        }
        if pts.len() == 1 {
            line(&mut img, pts[0], pts[0], shade);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_inside_the_frame() {
        let img = line_plot(&[vec![(0.0, 0.0), (1.0, 1.0)], vec![(0.0, 1.0), (1.0, f64::NAN)]]);
        assert_eq!(img.dims(), (W, H));
        // diagonal runs from the lower left to the upper right corner
        assert_eq!(img.get(MARGIN + 1, H - MARGIN - 1), 0.0);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_plot_is_blank() {
        assert!(line_plot(&[]).data().iter().all(|&v| v == 1.0));
    }
}
