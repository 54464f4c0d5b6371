use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use uwstereo_ffi::*;

fn last_error() -> String {
    let p = uws_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn rig() -> *mut UwsRig {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { uws_rig_rectified(300.0, 64, 48, 0.1, &mut r) }, UwsStatus::Ok);
    r
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    unsafe {
        assert_eq!(uws_rig_rectified(300.0, 64, 48, 0.1, ptr::null_mut()), UwsStatus::NullPointer);
        assert_eq!(uws_rig_load(ptr::null(), ptr::null_mut()), UwsStatus::NullPointer);
        assert!(last_error().contains("path"));
        let mut xyz = [0.0; 3];
        assert_eq!(uws_rig_triangulate(ptr::null(), 1.0, 1.0, 2.0, xyz.as_mut_ptr()), UwsStatus::NullPointer);
        let mut out = ptr::null_mut();
        assert_eq!(uws_match(ptr::null(), ptr::null(), ptr::null(), ptr::null(), 8, 8, 0, 2, &mut out), UwsStatus::NullPointer);
        assert!(out.is_null());
        assert_eq!(uws_disparity_width(ptr::null()), 0);
        assert_eq!(uws_cloud_len(ptr::null()), 0);
        assert_eq!(uws_cloud_copy_points(ptr::null(), ptr::null_mut(), 0), UwsStatus::NullPointer);
        assert_eq!(uws_reconstruct(ptr::null(), false, ptr::null_mut()), UwsStatus::NullPointer);
        uws_rig_free(ptr::null_mut());
        uws_stereo_net_free(ptr::null_mut());
        uws_disparity_free(ptr::null_mut());
        uws_cloud_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(uws_rig_rectified(-1.0, 64, 48, 0.1, &mut r), UwsStatus::InvalidArgument);
        let missing = CString::new("/nonexistent/rig.txt").unwrap();
        assert_eq!(uws_rig_load(missing.as_ptr(), &mut r), UwsStatus::Io);
        assert!(last_error().contains("/nonexistent/rig.txt"));
        assert!(r.is_null());
        let rig = rig();
        let mut xyz = [0.0; 3];
        assert_eq!(uws_rig_triangulate(rig, 1.0, 1.0, 0.0, xyz.as_mut_ptr()), UwsStatus::InvalidArgument);
        let img = vec![0.5f32; 16];
        let mut out = ptr::null_mut();
        // range wider than the image
        assert_ne!(uws_match(ptr::null(), img.as_ptr(), img.as_ptr(), ptr::null(), 4, 4, 0, 10, &mut out), UwsStatus::Ok);
        assert!(!uws_last_error().is_null());
        assert_eq!(uws_rig_triangulate(rig, 1.0, 1.0, 2.0, xyz.as_mut_ptr()), UwsStatus::Ok);
        assert!(uws_last_error().is_null(), "a successful call clears the message");
        uws_rig_free(rig);
    }
}

#[test]
fn constant_disparity_triangulates_to_a_fronto_parallel_plane() {
    unsafe {
        let rig = rig();
        let (w, h) = (64usize, 48usize);
        let values = vec![50.0f32; w * h];
        let mut map = ptr::null_mut();
        assert_eq!(uws_disparity_from_values(values.as_ptr(), w, h, &mut map), UwsStatus::Ok);
        assert_eq!((uws_disparity_width(map), uws_disparity_height(map)), (w, h));
        let mut cloud = ptr::null_mut();
        assert_eq!(uws_cloud_from_disparity(map, rig, &mut cloud), UwsStatus::Ok);
        assert_eq!(uws_cloud_len(cloud), w * h);
        let mut pts = vec![0.0; 3 * w * h];
        assert_eq!(uws_cloud_copy_points(cloud, pts.as_mut_ptr(), 2), UwsStatus::InvalidArgument);
        assert_eq!(uws_cloud_copy_points(cloud, pts.as_mut_ptr(), pts.len()), UwsStatus::Ok);
        // z = f * b / d
        for p in pts.chunks(3) {
            assert!((p[2] - 300.0 * 0.1 / 50.0).abs() < 1e-12);
        }
        let mut filtered = ptr::null_mut();
        assert_eq!(uws_cloud_remove_outliers(cloud, 16, 2.0, &mut filtered), UwsStatus::Ok);
        assert_eq!(uws_cloud_len(filtered), w * h);
        let dir = tempfile::tempdir().unwrap();
        let ply = CString::new(dir.path().join("c.ply").to_str().unwrap()).unwrap();
        assert_eq!(uws_cloud_write_ply(filtered, ply.as_ptr()), UwsStatus::Ok);
        assert!(std::fs::read(dir.path().join("c.ply")).unwrap().starts_with(b"ply\n"));
        uws_cloud_free(filtered);
        uws_cloud_free(cloud);
        uws_disparity_free(map);
        uws_rig_free(rig);
    }
}

#[test]
fn baseline_matcher_recovers_a_shift() {
    let (w, h, shift) = (48usize, 24usize, 5usize);
    let tex = |x: usize, y: usize| ((x * 7919 + y * 104729) % 251) as f32 / 250.0;
    let left: Vec<f32> = (0..w * h).map(|i| tex(i % w + 100, i / w)).collect();
    let right: Vec<f32> = (0..w * h).map(|i| tex(i % w + 100 + shift, i / w)).collect();
    unsafe {
        let mut map = ptr::null_mut();
        assert_eq!(uws_match(ptr::null(), left.as_ptr(), right.as_ptr(), ptr::null(), w, h, 0, 8, &mut map), UwsStatus::Ok);
        let mut d = vec![0f32; w * h];
        assert_eq!(uws_disparity_copy(map, d.as_mut_ptr(), d.len()), UwsStatus::Ok);
        let interior: Vec<f32> = (6..h - 6).flat_map(|y| (16..w - 6).map(move |x| (x, y))).map(|(x, y)| d[y * w + x]).collect();
        let hits = interior.iter().filter(|v| (**v - shift as f32).abs() < 0.5).count();
        assert!(hits as f64 >= 0.99 * interior.len() as f64, "{hits}/{}", interior.len());
        uws_disparity_free(map);
    }
}

#[test]
fn reconstruct_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!("[paths]\noutput = {:?}\n[reconstruct.scene]\nwidth = 96\nheight = 64\nfocal = 240\n", dir.path().join("out")),
    )
    .unwrap();
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut s = UwsReconstructSummary::default();
    assert_eq!(unsafe { uws_reconstruct(c.as_ptr(), true, &mut s) }, UwsStatus::Ok, "{}", last_error());
    assert!(s.points > 1000 && s.points <= s.raw_points);
    assert!(s.rmse >= 0.0 && s.rmse < 2e-3, "{}", s.rmse);
    let bad = CString::new(dir.path().join("missing.toml").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { uws_reconstruct(bad.as_ptr(), true, &mut s) }, UwsStatus::Config);
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/uwstereo.h");
    assert!(header.exists());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libuwstereo_ffi.a");
    assert!(lib.exists(), "{}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "uwstereo.h"
int main(void) {
    UwsRig *rig = NULL;
    if (uws_rig_rectified(300.0, 64, 48, 0.1, &rig) != UWS_STATUS_OK) return 1;
    double xyz[3];
    if (uws_rig_triangulate(rig, 31.5, 23.5, 30.0, xyz) != UWS_STATUS_OK) return 2;
    if (xyz[2] < 0.999 || xyz[2] > 1.001) return 3;
    if (uws_rig_triangulate(NULL, 0, 0, 1, xyz) != UWS_STATUS_NULL_POINTER) return 4;
    if (strstr(uws_last_error(), "rig") == NULL) return 5;
    uws_rig_free(rig);
    uws_rig_free(NULL);
    printf("%s\n", uws_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("t");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
