//! C interface to `uwstereo`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load`/producing call and released with the matching `*_free`.
//! Functions return a [`UwsStatus`]; on failure the message is available
//! from [`uws_last_error`] on the same thread. Null pointers are reported as
//! [`UwsStatus::NullPointer`], never dereferenced, and `*_free(NULL)` is a
//! no-op. Panics are caught and reported as [`UwsStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uwstereo::error::Error;
use uwstereo::image::{Image, Mask};
use uwstereo::optics::CameraModel;
use uwstereo::pipeline::{cmd_reconstruct, PipelineConfig};
use uwstereo::recon::{disparity_to_cloud, remove_outliers, write_cloud_ply, PointCloud};
use uwstereo::rig::StereoRig;
use uwstereo::stereo::{
    baseline_block_match, build_cost_volume, wta_disparity_with, BlockMatchOptions, DisparityMap, DisparityRange, StereoNet,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UwsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Shape = 6,
    Numeric = 7,
    Internal = 8,
}

/// Calibrated two-camera rig.
pub struct UwsRig(StereoRig);

/// Trained patch-similarity network.
pub struct UwsStereoNet(StereoNet);

/// Disparity map; invalid pixels hold negative infinity.
pub struct UwsDisparity(DisparityMap);

/// Triangulated points, optionally colored.
pub struct UwsCloud(PointCloud);

/// Summary of a reconstruction run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UwsReconstructSummary {
    pub points: usize,
    pub raw_points: usize,
    pub triangles: usize,
    /// Negative when no ground truth was available.
    pub rmse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UwsStatus {
    match e {
        Error::Config(_) => UwsStatus::Config,
        Error::InvalidArgument(_) => UwsStatus::InvalidArgument,
        Error::Io { .. } => UwsStatus::Io,
        Error::Format(_) | Error::Image(_) => UwsStatus::Format,
        Error::Shape(_) => UwsStatus::Shape,
        Error::Numeric(_) | Error::NonConvergence { .. } | Error::NoPath(_) => UwsStatus::Numeric,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UwsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UwsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            UwsStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            UwsStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            UwsStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn pixels<'a>(p: *const f32, width: usize, height: usize, what: &'static str) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let n = width.checked_mul(height).filter(|&n| n > 0).ok_or_else(|| Fail::Arg(format!("{what}: bad extents {width}x{height}")))?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn image_arg(p: *const f32, width: usize, height: usize, what: &'static str) -> Result<Image, Fail> {
    let px = pixels(p, width, height, what)?;
    Ok(Image::from_vec(width, height, px.iter().map(|&v| v as f64).collect())?)
}

unsafe fn mask_arg(p: *const u8, width: usize, height: usize) -> Option<Mask> {
    (!p.is_null()).then(|| {
        let m = std::slice::from_raw_parts(p, width * height);
        Mask::from_fn(width, height, |x, y| m[y * width + x] != 0)
    })
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uws_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn uws_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------- rig

/// Ideal rectified rig: two pinhole cameras `baseline` metres apart along x.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn uws_rig_rectified(
    focal: f64,
    width: usize,
    height: usize,
    baseline: f64,
    out: *mut *mut UwsRig,
) -> UwsStatus {
    guard(|| {
        if !(focal > 0.0 && baseline > 0.0) || width == 0 || height == 0 {
            return Err(Fail::Arg("focal length, baseline and extents must be positive".into()));
        }
        let cam = CameraModel::pinhole(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height);
        put(out, UwsRig(StereoRig::rectified_pair(cam, baseline)?))
    })
}

/// Loads a rig file written by `uwstereo calibrate`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_rig_load(path: *const c_char, out: *mut *mut UwsRig) -> UwsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        put(out, UwsRig(StereoRig::from_kv(&uwstereo::kv::KvDoc::parse(&text)?)?))
    })
}

/// Rectified-frame pixel and disparity to a left-camera point in metres.
/// Non-positive disparities are rejected.
///
/// # Safety
/// `rig` must come from this library; `xyz` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn uws_rig_triangulate(rig: *const UwsRig, x: f64, y: f64, disparity: f64, xyz: *mut f64) -> UwsStatus {
    guard(|| {
        let rig = borrow(rig, "rig")?;
        if xyz.is_null() {
            return Err(Fail::Null("xyz"));
        }
        let p = rig.0.triangulate(x, y, disparity).ok_or_else(|| Fail::Arg(format!("disparity {disparity} cannot be triangulated")))?;
        std::slice::from_raw_parts_mut(xyz, 3).copy_from_slice(&[p.x, p.y, p.z]);
        Ok(())
    })
}

/// # Safety
/// `rig` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uws_rig_free(rig: *mut UwsRig) {
    release(rig)
}

// ---------------------------------------------------------------- matching

/// Loads a stereo network checkpoint written by `uwstereo train`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_stereo_net_load(path: *const c_char, out: *mut *mut UwsStereoNet) -> UwsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, UwsStereoNet(StereoNet::load(&path)?))
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uws_stereo_net_free(net: *mut UwsStereoNet) {
    release(net)
}

/// Matches a rectified pair of row-major grayscale images in [0, 1]. With
/// `net` NULL the block-matching baseline runs; otherwise the network.
/// `mask` may be NULL (full frame) or hold one byte per pixel, nonzero on
/// the pixels to match.
///
/// # Safety
/// `left` and `right` must hold `width * height` floats, `mask` (when not
/// NULL) that many bytes; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_match(
    net: *const UwsStereoNet,
    left: *const f32,
    right: *const f32,
    mask: *const u8,
    width: usize,
    height: usize,
    min_disparity: usize,
    max_disparity: usize,
    out: *mut *mut UwsDisparity,
) -> UwsStatus {
    guard(|| {
        let l = image_arg(left, width, height, "left")?;
        let r = image_arg(right, width, height, "right")?;
        let mask = mask_arg(mask, width, height);
        let range = DisparityRange::new(min_disparity, max_disparity)?;
        let map = match net.as_ref() {
            None => baseline_block_match(&l, &r, mask.as_ref(), &BlockMatchOptions::default(), range)?,
            Some(net) => wta_disparity_with(&build_cost_volume(&l, &r, mask.as_ref(), &net.0, range)?, true),
        };
        put(out, UwsDisparity(map))
    })
}

/// Wraps caller-provided disparities; non-finite values are invalid.
///
/// # Safety
/// `values` must hold `width * height` floats; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_disparity_from_values(
    values: *const f32,
    width: usize,
    height: usize,
    out: *mut *mut UwsDisparity,
) -> UwsStatus {
    guard(|| {
        let v = pixels(values, width, height, "values")?;
        let v = v.iter().map(|&d| if d.is_finite() { d as f64 } else { f64::NEG_INFINITY }).collect();
        put(out, UwsDisparity(DisparityMap::from_values(width, height, v)?))
    })
}

/// Width and height of a disparity map; 0 for NULL.
///
/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uws_disparity_width(map: *const UwsDisparity) -> usize {
    map.as_ref().map_or(0, |m| m.0.width())
}

/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uws_disparity_height(map: *const UwsDisparity) -> usize {
    map.as_ref().map_or(0, |m| m.0.height())
}

/// Copies the map row-major into `buffer`, which must hold `len >= width *
/// height` floats. Invalid pixels are negative infinity.
///
/// # Safety
/// `map` must be a live handle; `buffer` must be writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn uws_disparity_copy(map: *const UwsDisparity, buffer: *mut f32, len: usize) -> UwsStatus {
    guard(|| {
        let m = borrow(map, "map")?;
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let v = m.0.values();
        if len < v.len() {
            return Err(Fail::Arg(format!("buffer holds {len} values, {} needed", v.len())));
        }
        let dst = std::slice::from_raw_parts_mut(buffer, v.len());
        for (d, s) in dst.iter_mut().zip(v) {
            *d = *s as f32;
        }
        Ok(())
    })
}

/// # Safety
/// `map` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uws_disparity_free(map: *mut UwsDisparity) {
    release(map)
}

// ---------------------------------------------------------------- clouds

/// Triangulates every valid disparity.
///
/// # Safety
/// Handles must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_from_disparity(map: *const UwsDisparity, rig: *const UwsRig, out: *mut *mut UwsCloud) -> UwsStatus {
    guard(|| {
        let (m, r) = (borrow(map, "map")?, borrow(rig, "rig")?);
        put(out, UwsCloud(disparity_to_cloud(&m.0, &r.0, None)?))
    })
}

/// New cloud without statistical outliers: points whose mean distance to
/// `neighbors` nearest neighbours is unusually large.
///
/// # Safety
/// `cloud` must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_remove_outliers(
    cloud: *const UwsCloud,
    neighbors: usize,
    sigma: f64,
    out: *mut *mut UwsCloud,
) -> UwsStatus {
    guard(|| {
        let c = borrow(cloud, "cloud")?;
        if neighbors == 0 || !(sigma > 0.0) {
            return Err(Fail::Arg("neighbors and sigma must be positive".into()));
        }
        put(out, UwsCloud(remove_outliers(&c.0, neighbors, sigma)?))
    })
}

/// Point count; 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_len(cloud: *const UwsCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies points as consecutive x, y, z doubles; `len` counts doubles.
///
/// # Safety
/// `cloud` must be live; `buffer` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_copy_points(cloud: *const UwsCloud, buffer: *mut f64, len: usize) -> UwsStatus {
    guard(|| {
        let c = borrow(cloud, "cloud")?;
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let need = 3 * c.0.len();
        if len < need {
            return Err(Fail::Arg(format!("buffer holds {len} values, {need} needed")));
        }
        let dst = std::slice::from_raw_parts_mut(buffer, need);
        for (chunk, p) in dst.chunks_exact_mut(3).zip(&c.0.points) {
            chunk.copy_from_slice(&[p.x, p.y, p.z]);
        }
        Ok(())
    })
}

/// Writes a binary PLY file.
///
/// # Safety
/// `cloud` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_write_ply(cloud: *const UwsCloud, path: *const c_char) -> UwsStatus {
    guard(|| {
        let c = borrow(cloud, "cloud")?;
        let path = path_arg(path, "path")?;
        Ok(write_cloud_ply(&path, &c.0)?)
    })
}

/// # Safety
/// `cloud` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uws_cloud_free(cloud: *mut UwsCloud) {
    release(cloud)
}

// ---------------------------------------------------------------- pipeline

/// Runs the `reconstruct` command with a TOML configuration file, or the
/// defaults when `config_path` is NULL. Artifacts go to `paths.output`.
///
/// # Safety
/// `config_path` must be NULL or NUL-terminated; `summary` must be valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn uws_reconstruct(
    config_path: *const c_char,
    no_segmentation: bool,
    summary: *mut UwsReconstructSummary,
) -> UwsStatus {
    guard(|| {
        if summary.is_null() {
            return Err(Fail::Null("summary"));
        }
        let cfg = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::load(&path_arg(config_path, "config_path")?)?
        };
        let out = cmd_reconstruct(&cfg, no_segmentation)?;
        *summary = UwsReconstructSummary {
            points: out.cloud.len(),
            raw_points: out.raw_points,
            triangles: out.triangles,
            rmse: out.report.map_or(-1.0, |r| r.rmse),
        };
        Ok(())
    })
}
