use std::ffi::{CStr, CString};
use std::ptr;

use cbipm_ffi::*;

fn last_error() -> String {
    let p = cbipm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy() -> *mut CbipmDataset {
    let x = [
        -1.0, -1.0, 0.2, 0.1, 1.0, -1.0, 0.5, -0.3, -1.0, 1.0, 1.0, 1.0, -0.1, 0.4, 0.0, 0.5,
    ];
    let t = [0u8, 1, 0, 1, 0, 0, 1, 0];
    let y = [1.0, 2.0, 0.5, 3.0, 1.5, 0.0, 2.5, 1.0];
    let mut ds = ptr::null_mut();
    let st = unsafe { cbipm_dataset_new(x.as_ptr(), 8, 2, t.as_ptr(), y.as_ptr(), &mut ds) };
    assert_eq!(st, CbipmStatus::Ok);
    ds
}

#[test]
fn dataset_round_trip() {
    let ds = toy();
    unsafe {
        assert_eq!(cbipm_dataset_n(ds), 8);
        assert_eq!(cbipm_dataset_d(ds), 2);
        cbipm_dataset_free(ds);
        assert_eq!(cbipm_dataset_n(ptr::null()), 0);
        cbipm_dataset_free(ptr::null_mut());
    }
}

#[test]
fn cbps_weights_balance_the_toy_data() {
    let ds = toy();
    let method = CString::new("cbps").unwrap();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(
            cbipm_balance(ds, method.as_ptr(), CbipmEstimand::Att, 0, 0, &mut b),
            CbipmStatus::Ok
        );
        let mut w = vec![0.0; 8];
        assert_eq!(
            cbipm_balance_weights(b, CbipmSide::Control, w.as_mut_ptr(), 8),
            CbipmStatus::Ok
        );
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut wt = vec![0.0; 8];
        assert_eq!(
            cbipm_balance_weights(b, CbipmSide::Treated, wt.as_mut_ptr(), 8),
            CbipmStatus::Ok
        );
        assert_eq!(wt, vec![0.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0, 0.0]);
        let mut ipm = f64::NAN;
        assert_eq!(cbipm_balance_final_ipm(b, &mut ipm), CbipmStatus::Ok);
        assert!(ipm < 1e-8);
        let mut est = f64::NAN;
        assert_eq!(cbipm_estimate(ds, b, &mut est), CbipmStatus::Ok);
        let control_mean: f64 = [1.0, 0.5, 1.5, 0.0, 1.0]
            .iter()
            .zip([0, 2, 4, 5, 7])
            .map(|(y, i)| y * w[i])
            .sum();
        assert!((est - (2.5 - control_mean)).abs() < 1e-12);
        cbipm_balance_free(b);
        cbipm_dataset_free(ds);
    }
}

#[test]
fn simulate_and_balance_ate_with_mmd() {
    let design = CString::new("ks_linear").unwrap();
    let method = CString::new("pcbipm-mmd").unwrap();
    let (mut ds, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(cbipm_simulate(design.as_ptr(), 200, 3, &mut ds), CbipmStatus::Ok);
        assert_eq!(cbipm_dataset_d(ds), 4);
        assert_eq!(
            cbipm_balance(ds, method.as_ptr(), CbipmEstimand::Ate, 9, 50, &mut b),
            CbipmStatus::Ok
        );
        for side in [CbipmSide::Control, CbipmSide::Treated] {
            let mut w = vec![0.0; 200];
            assert_eq!(cbipm_balance_weights(b, side, w.as_mut_ptr(), 200), CbipmStatus::Ok);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut est = f64::NAN;
        assert_eq!(cbipm_estimate(ds, b, &mut est), CbipmStatus::Ok);
        assert!(est.is_finite());
        cbipm_balance_free(b);
        cbipm_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let ds = toy();
    let mut b = ptr::null_mut();
    unsafe {
        let bad = CString::new("boosting").unwrap();
        let st = cbipm_balance(ds, bad.as_ptr(), CbipmEstimand::Att, 0, 0, &mut b);
        assert_eq!(st, CbipmStatus::InvalidArgument);
        assert!(last_error().contains("unknown method"));
        assert!(b.is_null());

        let st = cbipm_balance(ptr::null(), bad.as_ptr(), CbipmEstimand::Att, 0, 0, &mut b);
        assert_eq!(st, CbipmStatus::NullPointer);

        let x = [0.0, 1.0];
        let t = [0u8, 2];
        let mut other = ptr::null_mut();
        let st = cbipm_dataset_new(x.as_ptr(), 2, 1, t.as_ptr(), ptr::null(), &mut other);
        assert_eq!(st, CbipmStatus::InvalidArgument);
        assert!(last_error().contains("not 0 or 1"));

        let t = [1u8, 1];
        let st = cbipm_dataset_new(x.as_ptr(), 2, 1, t.as_ptr(), ptr::null(), &mut other);
        assert_eq!(st, CbipmStatus::InvalidData);
        cbipm_dataset_free(ds);
    }
}

#[test]
fn infeasible_entropy_balancing_is_reported() {
    // treated units lie outside the control range
    let x = [0.0, 1.0, 2.0, 5.0, 6.0];
    let t = [0u8, 0, 0, 1, 1];
    let mut ds = ptr::null_mut();
    let method = CString::new("eb").unwrap();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(
            cbipm_dataset_new(x.as_ptr(), 5, 1, t.as_ptr(), ptr::null(), &mut ds),
            CbipmStatus::Ok
        );
        let st = cbipm_balance(ds, method.as_ptr(), CbipmEstimand::Att, 0, 0, &mut b);
        assert_eq!(st, CbipmStatus::Infeasible);
        assert!(last_error().contains("no feasible weights"));
        cbipm_dataset_free(ds);
    }
}

#[test]
fn short_buffers_and_missing_outcomes_are_rejected() {
    let x = [-1.0, 0.0, 1.0, 0.5];
    let t = [0u8, 1, 0, 0];
    let mut ds = ptr::null_mut();
    let method = CString::new("glm").unwrap();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(
            cbipm_dataset_new(x.as_ptr(), 4, 1, t.as_ptr(), ptr::null(), &mut ds),
            CbipmStatus::Ok
        );
        assert_eq!(
            cbipm_balance(ds, method.as_ptr(), CbipmEstimand::Att, 0, 0, &mut b),
            CbipmStatus::Ok
        );
        let mut w = vec![0.0; 3];
        assert_eq!(
            cbipm_balance_weights(b, CbipmSide::Control, w.as_mut_ptr(), 3),
            CbipmStatus::InvalidArgument
        );
        let mut est = 0.0;
        assert_eq!(cbipm_estimate(ds, b, &mut est), CbipmStatus::InvalidData);
        assert!(last_error().contains("outcome"));
        cbipm_balance_free(b);
        cbipm_dataset_free(ds);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cbipm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/cbipm.h");
    for name in [
        "cbipm_last_error",
        "cbipm_version",
        "cbipm_dataset_new",
        "cbipm_simulate",
        "cbipm_dataset_n",
        "cbipm_dataset_d",
        "cbipm_dataset_free",
        "cbipm_balance",
        "cbipm_balance_weights",
        "cbipm_balance_final_ipm",
        "cbipm_estimate",
        "cbipm_balance_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct CbipmDataset CbipmDataset;"));
    assert!(header.contains("CBIPM_STATUS_INFEASIBLE = 4"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/tests/smoke.c"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
