//! Single-channel floating-point images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale image, intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Pixel with coordinates clamped to the border.
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers). `None` outside `[0, w-1] x [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Pads right/bottom by edge replication so both extents are multiples
    /// of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Image {
        let w = self.width.div_ceil(multiple) * multiple;
        let h = self.height.div_ceil(multiple) * multiple;
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        Image::from_fn(w, h, |x, y| self.get(x.min(self.width - 1), y.min(self.height - 1)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// `1 x 1 x H x W` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("image extents")
    }

    /// Channel `channel` of batch element `sample`.
    pub fn from_tensor(t: &Tensor, sample: usize, channel: usize) -> Result<Image> {
        let (n, c, h, w) = t.dims4()?;
        if sample >= n || channel >= c {
            return Err(Error::Shape(format!("no plane ({sample}, {channel}) in {:?}", t.shape())));
        }
        let off = (sample * c + channel) * h * w;
        Image::from_vec(w, h, t.data()[off..off + h * w].to_vec())
    }
}

/// Peak signal-to-noise ratio in dB for a peak value of 1.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.dims(), b.dims(), "psnr of differently sized images");
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR restricted to pixels where `valid` holds.
pub fn psnr_masked(a: &Image, b: &Image, valid: impl Fn(usize, usize) -> bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if valid(x, y) {
                sum += (a.get(x, y) - b.get(x, y)).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 || sum == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (n as f64 / sum).log10()
}

/// Binary pixel mask with the same extents as a source image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, bits: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Intersection over union; 1 when both are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count();
        let union = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_ramp_exactly() {
        let img = Image::from_fn(5, 4, |x, y| 2.0 * x as f64 + 0.5 * y as f64);
        assert!((img.bilinear(1.25, 2.5).unwrap() - (2.5 + 1.25)).abs() < 1e-12);
        assert_eq!(img.bilinear(4.0, 3.0), Some(9.5));
        assert_eq!(img.bilinear(-0.1, 0.0), None);
        assert_eq!(img.bilinear(0.0, 3.01), None);
    }

    #[test]
    fn padding_reaches_multiple() {
        let img = Image::from_fn(5, 3, |x, y| (x + y) as f64);
        let p = img.pad_to_multiple(4);
        assert_eq!(p.dims(), (8, 4));
        assert_eq!(p.crop(0, 0, 5, 3).unwrap(), img);
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let a = Image::filled(3, 3, 0.5);
        assert!(psnr(&a, &a).is_infinite());
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }
}
