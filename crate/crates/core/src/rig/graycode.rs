use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Minimum `|pattern - inverse|` for a bit to count as decoded, as a
/// fraction of the [0, 1] intensity range.
pub const DEFAULT_MIN_CONTRAST: f64 = 0.05;

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > 31 {
        return Err(Error::InvalidArgument(format!("bit count must lie in 1..=31, got {bits}")));
    }
    Ok(())
}

/// Reflected binary code of `index`.
pub fn gray_encode(index: u32, bits: u32) -> Result<u32> {
    check_bits(bits)?;
    if index >> bits != 0 {
        return Err(Error::InvalidArgument(format!("index {index} does not fit in {bits} bits")));
    }
    Ok(index ^ (index >> 1))
}

pub fn gray_decode(code: u32, bits: u32) -> Result<u32> {
    check_bits(bits)?;
    if code >> bits != 0 {
        return Err(Error::InvalidArgument(format!("codeword {code:#b} does not fit in {bits} bits")));
    }
    let mut index = code;
    let mut shift = code >> 1;
    while shift != 0 {
        index ^= shift;
        shift >>= 1;
    }
    Ok(index)
}

/// Which display coordinate a pattern stack encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Stripes vary along x; decodes the display column.
    Horizontal,
    /// Stripes vary along y; decodes the display row.
    Vertical,
}

/// Binary stripe frames, most significant bit first.
#[derive(Clone, Debug)]
pub struct GrayCodePattern {
    pub bit_count: u32,
    pub axis: Axis,
    pub frames: Vec<Mask>,
}

impl GrayCodePattern {
    /// Fewest bits that cover `extent` codes.
    pub fn bits_for(extent: usize) -> u32 {
        (usize::BITS - extent.saturating_sub(1).leading_zeros()).max(1)
    }

    pub fn new(width: usize, height: usize, axis: Axis) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("display extents must be positive".into()));
        }
        let extent = if axis == Axis::Horizontal { width } else { height };
        let bit_count = Self::bits_for(extent);
        let frames = (0..bit_count)
            .map(|b| {
                let shift = bit_count - 1 - b;
                Mask::from_fn(width, height, |x, y| {
                    let i = if axis == Axis::Horizontal { x } else { y } as u32;
                    (i ^ (i >> 1)) >> shift & 1 == 1
                })
            })
            .collect();
        Ok(Self { bit_count, axis, frames })
    }
}

/// Captured frames: for every bit, the pattern image and its inverse.
#[derive(Clone, Debug, Default)]
pub struct GrayCapture {
    pub horizontal: Vec<(Image, Image)>,
    pub vertical: Vec<(Image, Image)>,
}

/// Dense camera-pixel to display-pixel map. Display coordinates are pixel
/// centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    pub width: usize,
    pub height: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub valid: Mask,
}

impl CorrespondenceMap {
    /// `(camera pixel, display pixel)` for every valid entry.
    pub fn pairs(&self) -> Vec<((f64, f64), (f64, f64))> {
        let mut out = Vec::new();
        for yy in 0..self.height {
            for xx in 0..self.width {
                if self.valid.get(xx, yy) {
                    let i = yy * self.width + xx;
                    out.push(((xx as f64, yy as f64), (self.x[i], self.y[i])));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrayDecoder {
    pub display_width: usize,
    pub display_height: usize,
    pub min_contrast: f64,
}

impl GrayDecoder {
    pub fn new(display_width: usize, display_height: usize) -> Self {
        Self { display_width, display_height, min_contrast: DEFAULT_MIN_CONTRAST }
    }
}

/// Decodes each camera pixel by comparing every pattern frame with its
/// inverse. A pixel is invalid if any bit's contrast falls below the
/// threshold or the code lands outside the display.
pub fn decode_correspondences(capture: &GrayCapture, decoder: &GrayDecoder) -> Result<CorrespondenceMap> {
    let bits_x = GrayCodePattern::bits_for(decoder.display_width) as usize;
    let bits_y = GrayCodePattern::bits_for(decoder.display_height) as usize;
    if capture.horizontal.len() != bits_x || capture.vertical.len() != bits_y {
        return Err(Error::InvalidArgument(format!(
            "expected {bits_x} horizontal and {bits_y} vertical frame pairs, got {} and {}",
            capture.horizontal.len(),
            capture.vertical.len()
        )));
    }
    let (w, h) = capture.horizontal[0].0.dims();
    let all = capture.horizontal.iter().chain(&capture.vertical);
    if all.clone().any(|(p, n)| p.dims() != (w, h) || n.dims() != (w, h)) {
        return Err(Error::Shape("gray-code frames differ in size".into()));
    }
    let decode_axis = |frames: &[(Image, Image)], x: usize, y: usize, extent: usize| -> Option<f64> {
        let mut code = 0u32;
        for (p, n) in frames {
            let diff = p.get(x, y) - n.get(x, y);
            if diff.abs() < decoder.min_contrast {
                return None;
            }
            code = code << 1 | (diff > 0.0) as u32;
        }
        let index = gray_decode(code, frames.len() as u32).ok()? as usize;
        (index < extent).then_some(index as f64)
    };
    let mut map = CorrespondenceMap {
        width: w,
        height: h,
        x: vec![f64::NEG_INFINITY; w * h],
        y: vec![f64::NEG_INFINITY; w * h],
        valid: Mask::new(w, h, false),
    };
    for y in 0..h {
        for x in 0..w {
            let dx = decode_axis(&capture.horizontal, x, y, decoder.display_width);
            let dy = decode_axis(&capture.vertical, x, y, decoder.display_height);
            if let (Some(dx), Some(dy)) = (dx, dy) {
                map.x[y * w + x] = dx;
                map.y[y * w + x] = dy;
                map.valid.set(x, y, true);
            }
        }
    }
    Ok(map)
}

/// Renders what a camera records when display pixel `warp(x, y)` (nearest
/// pixel center) is imaged at camera pixel `(x, y)`. Pixels seeing nothing
/// stay dark in both the pattern and its inverse.
pub fn simulate_capture(
    display_width: usize,
    display_height: usize,
    camera_width: usize,
    camera_height: usize,
    warp: impl Fn(f64, f64) -> Option<(f64, f64)>,
) -> Result<GrayCapture> {
    let lookup: Vec<Option<(usize, usize)>> = (0..camera_height)
        .flat_map(|y| (0..camera_width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (u, v) = warp(x as f64, y as f64)?;
            let (u, v) = (u.round(), v.round());
            (u >= 0.0 && v >= 0.0 && u < display_width as f64 && v < display_height as f64).then_some((u as usize, v as usize))
        })
        .collect();
    let render = |axis: Axis| -> Result<Vec<(Image, Image)>> {
        let pattern = GrayCodePattern::new(display_width, display_height, axis)?;
        Ok(pattern
            .frames
            .iter()
            .map(|frame| {
                let shot = |on: bool| {
                    Image::from_fn(camera_width, camera_height, |x, y| match lookup[y * camera_width + x] {
                        Some((u, v)) => {
                            if frame.get(u, v) == on {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        None => 0.0,
                    })
                };
                (shot(true), shot(false))
            })
            .collect())
    };
    Ok(GrayCapture { horizontal: render(Axis::Horizontal)?, vertical: render(Axis::Vertical)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflected_binary_values() {
        assert_eq!(gray_encode(0, 4).unwrap(), 0);
        assert_eq!(gray_encode(1, 4).unwrap(), 1);
        assert_eq!(gray_encode(2, 4).unwrap(), 3);
        assert_eq!(gray_encode(3, 4).unwrap(), 2);
        assert!(gray_encode(16, 4).is_err());
        assert!(gray_decode(16, 4).is_err());
    }

    #[test]
    fn exhaustive_ten_bit_roundtrip_and_adjacency() {
        for i in 0..1024u32 {
            let g = gray_encode(i, 10).unwrap();
            assert_eq!(gray_decode(g, 10).unwrap(), i);
            if i > 0 {
                assert_eq!((g ^ gray_encode(i - 1, 10).unwrap()).count_ones(), 1);
            }
        }
    }

    proptest! {
        #[test]
        fn consecutive_codes_differ_in_one_bit(i in 0u32..(1 << 20)) {
            let a = gray_encode(i, 21).unwrap();
            let b = gray_encode(i + 1, 21).unwrap();
            prop_assert_eq!((a ^ b).count_ones(), 1);
        }
    }

    #[test]
    fn bit_count_covers_extent() {
        assert_eq!(GrayCodePattern::bits_for(1), 1);
        assert_eq!(GrayCodePattern::bits_for(2), 1);
        assert_eq!(GrayCodePattern::bits_for(3), 2);
        assert_eq!(GrayCodePattern::bits_for(1024), 10);
        assert_eq!(GrayCodePattern::bits_for(1025), 11);
        let p = GrayCodePattern::new(100, 40, Axis::Vertical).unwrap();
        assert_eq!(p.frames.len(), 6);
        assert!(1usize << p.bit_count >= 40);
    }

    #[test]
    fn identity_warp_decodes_exactly() {
        let cap = simulate_capture(40, 30, 40, 30, |x, y| Some((x, y))).unwrap();
        let map = decode_correspondences(&cap, &GrayDecoder::new(40, 30)).unwrap();
        assert_eq!(map.valid.count(), 1200);
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!((map.x[y * 40 + x], map.y[y * 40 + x]), (x as f64, y as f64));
            }
        }
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let mut cap = simulate_capture(40, 30, 40, 30, |x, y| Some((x, y))).unwrap();
        cap.vertical.pop();
        assert!(decode_correspondences(&cap, &GrayDecoder::new(40, 30)).is_err());
    }
}
