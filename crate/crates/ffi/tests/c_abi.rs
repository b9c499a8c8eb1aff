use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use distkm_ffi::*;

fn last_error() -> String {
    let p = distkm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dataset(n: usize, k: u32) -> *mut DistkmDataset {
    let ds = distkm_dataset_new();
    for i in 0..n {
        let id = CString::new(format!("s{i}")).unwrap();
        for t in 1..=k {
            let u = ((i * 7919 + t as usize * 104_729) % 1000) as f64 / 1000.0;
            let status = unsafe { distkm_dataset_push(ds, id.as_ptr(), t, 4.0 * (u - 0.5)) };
            assert_eq!(status, DistkmStatus::Ok);
        }
    }
    ds
}

fn points(curve: *const DistkmCurve) -> Vec<DistkmPoint> {
    let n = unsafe { distkm_curve_len(curve) };
    (0..n)
        .map(|i| {
            let mut p = DistkmPoint::default();
            assert_eq!(unsafe { distkm_curve_point(curve, i, &mut p) }, DistkmStatus::Ok);
            p
        })
        .collect()
}

#[test]
fn dkm_and_km_through_handles() {
    let ds = dataset(150, 4);
    assert_eq!(unsafe { distkm_dataset_len(ds) }, 600);
    let mut opts = distkm_estimate_options_default();
    opts.cutpoint = 1.0;
    opts.bootstrap_reps = 20;
    let mut dkm = ptr::null_mut();
    let mut km = ptr::null_mut();
    unsafe {
        assert_eq!(distkm_estimate_dkm(ds, &opts, &mut dkm), DistkmStatus::Ok);
        assert_eq!(distkm_estimate_km(ds, &opts, &mut km), DistkmStatus::Ok);
    }
    let (a, b) = (points(dkm), points(km));
    assert_eq!(a.len(), 4);
    assert_eq!(b.len(), 4);
    let mut prev = 1.0;
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.time, y.time);
        assert_eq!(x.n_risk, y.n_risk);
        assert!(x.s_hat <= prev && x.s_hat > 0.0);
        assert!(x.se_dist >= 0.0 && x.se_boot >= 0.0);
        prev = x.s_hat;
    }
    let mut p = DistkmPoint::default();
    assert_eq!(unsafe { distkm_curve_point(dkm, 4, &mut p) }, DistkmStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe {
        distkm_curve_free(dkm);
        distkm_curve_free(km);
        distkm_dataset_free(ds);
    }
}

#[test]
fn null_pointers_and_bad_arguments() {
    let mut out = ptr::null_mut();
    let opts = distkm_estimate_options_default();
    unsafe {
        assert_eq!(distkm_estimate_dkm(ptr::null(), &opts, &mut out), DistkmStatus::NullPointer);
        assert!(out.is_null());
        assert_eq!(distkm_dataset_push(ptr::null_mut(), ptr::null(), 1, 0.0), DistkmStatus::NullPointer);
        let ds = distkm_dataset_new();
        let id = CString::new("a").unwrap();
        assert_eq!(distkm_dataset_push(ds, id.as_ptr(), 0, 1.0), DistkmStatus::InvalidArgument);
        assert_eq!(distkm_dataset_push(ds, id.as_ptr(), 1, f64::INFINITY), DistkmStatus::InvalidArgument);
        assert_eq!(distkm_dataset_push(ds, id.as_ptr(), 1, 1.0), DistkmStatus::Ok);
        assert_eq!(distkm_dataset_push(ds, id.as_ptr(), 1, 2.0), DistkmStatus::Ok);
        assert_eq!(distkm_estimate_km(ds, &opts, &mut out), DistkmStatus::DataError);
        assert!(last_error().contains("duplicate"));
        distkm_dataset_free(ds);
        distkm_dataset_free(ptr::null_mut());
        distkm_curve_free(ptr::null_mut());
    }
}

#[test]
fn too_few_observations_is_numeric() {
    let ds = dataset(10, 3);
    let mut opts = distkm_estimate_options_default();
    opts.se_mode = DistkmSeMode::FullDelta;
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { distkm_estimate_dkm(ds, &opts, &mut out) }, DistkmStatus::NumericError);
    unsafe { distkm_dataset_free(ds) };
}

#[test]
fn csv_loading_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "subject,time,value\na,1,0.5\na,2,NA\nb,1,1.5\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { distkm_dataset_load_csv(c.as_ptr(), &mut ds) }, DistkmStatus::Ok);
    assert_eq!(unsafe { distkm_dataset_len(ds) }, 2);
    unsafe { distkm_dataset_free(ds) };
    let missing = CString::new(dir.path().join("none.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { distkm_dataset_load_csv(missing.as_ptr(), &mut ds) }, DistkmStatus::IoError);
    assert!(ds.is_null());
    assert!(last_error().contains("none.csv"));
}

#[test]
fn scalar_functions() {
    let oracle = 1f64.atan() / (2.0 * std::f64::consts::PI);
    assert!((distkm_owen_t(0.0, 1.0) - oracle).abs() < 1e-15);
    assert!((distkm_sn_cdf(0.0, 0.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
    assert!(distkm_sn_cdf(0.0, 0.0, -1.0, 0.0).is_nan());
    let xs: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    let mut fit = DistkmSnFit::default();
    assert_eq!(unsafe { distkm_sn_fit(xs.as_ptr(), xs.len(), &mut fit) }, DistkmStatus::Ok);
    assert_eq!(fit.n_fit, 200);
    assert!(fit.scale > 0.0 && fit.loglik.is_finite());
    assert_eq!(unsafe { distkm_sn_fit(xs.as_ptr(), 2, &mut fit) }, DistkmStatus::NumericError);
    let version = unsafe { CStr::from_ptr(distkm_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "distkm.h"

int main(void) {
    DistkmDataset *ds = distkm_dataset_new();
    char id[16];
    for (int i = 0; i < 60; ++i) {
        snprintf(id, sizeof id, "s%d", i);
        for (unsigned t = 1; t <= 3; ++t) {
            double u = (double)((i * 7919 + t * 104729) % 1000) / 1000.0;
            if (distkm_dataset_push(ds, id, t, 4.0 * (u - 0.5)) != DISTKM_STATUS_OK) return 1;
        }
    }
    DistkmEstimateOptions opts = distkm_estimate_options_default();
    opts.cutpoint = 1.0;
    opts.se_mode = DISTKM_SE_MODE_FULL_DELTA;
    DistkmCurve *curve = NULL;
    if (distkm_estimate_dkm(ds, &opts, &curve) != DISTKM_STATUS_OK) return 2;
    size_t n = distkm_curve_len(curve);
    for (size_t i = 0; i < n; ++i) {
        DistkmPoint p;
        if (distkm_curve_point(curve, i, &p) != DISTKM_STATUS_OK) return 3;
        if (isnan(p.s_hat)) return 4;
        printf("%u %.6f\n", p.time, p.s_hat);
    }
    distkm_curve_free(curve);
    distkm_dataset_free(ds);
    return n == 3 ? 0 : 5;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let lib = target_dir().join("libdistkm_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
}
