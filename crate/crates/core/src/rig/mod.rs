//! Stereo rig geometry, rectification, triangulation, and gray-code tooling
//! for building refraction-warped training data.

mod distortion_fit;
mod graycode;
mod stereo_rig;

pub use distortion_fit::{fit_distortion_from_correspondences, fit_distortion_from_points, DistortionFit, MIN_CORRESPONDENCES};
pub use graycode::{
    decode_correspondences, gray_decode, gray_encode, simulate_capture, Axis, CorrespondenceMap, GrayCapture,
    GrayCodePattern, GrayDecoder, DEFAULT_MIN_CONTRAST,
};
pub use stereo_rig::{RectifiedPair, Side, StereoRig};
