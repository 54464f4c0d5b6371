use super::camera::CameraModel;
use crate::image::{Image, Mask};

/// Resamples a lens-distorted image onto the ideal pinhole grid of the same
/// intrinsics. Output pixels whose source falls outside the input are
/// zero and cleared in the validity mask.
pub fn undistort_image(image: &Image, camera: &CameraModel) -> (Image, Mask) {
    if !camera.has_distortion() {
        return (image.clone(), Mask::new(image.width(), image.height(), true));
    }
    remap(image, |u, v| camera.distort_pixel(u, v))
}

/// Inverse of [`undistort_image`]: renders what the distorting lens would
/// record for an ideal image.
pub fn distort_image(image: &Image, camera: &CameraModel) -> (Image, Mask) {
    if !camera.has_distortion() {
        return (image.clone(), Mask::new(image.width(), image.height(), true));
    }
    remap(image, |u, v| camera.undistort_pixel(u, v))
}

/// `out(u, v) = input(source(u, v))` with bilinear sampling.
pub fn remap(image: &Image, source: impl Fn(f64, f64) -> (f64, f64)) -> (Image, Mask) {
    let (w, h) = (image.width(), image.height());
    let mut out = Image::new(w, h);
    let mut valid = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (su, sv) = source(x as f64, y as f64);
            if let Some(val) = image.bilinear(su, sv) {
                out.set(x, y, val);
                valid.set(x, y, true);
            }
        }
    }
    (out, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distortion_is_identity() {
        let cam = CameraModel::pinhole(100.0, 100.0, 16.0, 12.0, 32, 24);
        let img = Image::from_fn(32, 24, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0);
        let (out, valid) = undistort_image(&img, &cam);
        assert_eq!(out, img);
        assert_eq!(valid.count(), 32 * 24);
    }
}
