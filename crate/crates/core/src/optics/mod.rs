//! Flat-port refraction and its depth-dependent central approximation.

mod calibration;
mod camera;
mod refraction;
mod undistort;

pub use calibration::{
    approximation_error_curve, board_observations, depth_range, fit_depth_calibration, fit_depth_calibration_with,
    CalibrationGrid, CalibrationOptions, DepthCalibration, ErrorSample,
};
pub use camera::CameraModel;
pub use refraction::{
    backproject_to_depth, project_through_interface, refract_ray, refraction_point, trace_pixel, FlatInterface,
};
pub use undistort::{distort_image, remap, undistort_image};
