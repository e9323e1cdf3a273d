//! Exercises the C ABI end to end from Rust: handle lifecycle, status
//! codes, buffer copies, and the generated header.

use mmfit_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

const BASKET_DESIGN_CSV: &str = "0,0,1\n0,1,0\n0,1,1\n1,0,0\n1,0,1\n1,1,0\n1,1,1\n";
const BASKET: [u64; 7] = [374, 3684, 233, 991, 41, 607, 46];

fn parse_design(csv: &str) -> *mut MmfitDesign {
    let text = CString::new(csv).unwrap();
    let mut handle: *mut MmfitDesign = ptr::null_mut();
    let status = unsafe { mmfit_design_parse_csv(text.as_ptr(), &mut handle) };
    assert_eq!(status, MmfitStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn fit_the_basket_through_the_c_api() {
    unsafe {
        let design = parse_design(BASKET_DESIGN_CSV);
        assert_eq!(mmfit_design_rows(design), 7);
        assert_eq!(mmfit_design_cols(design), 3);

        let mut fit: *mut MmfitFit = ptr::null_mut();
        let status = mmfit_fit_curved(design, BASKET.as_ptr(), BASKET.len(), 0, &mut fit);
        assert_eq!(status, MmfitStatus::Ok);
        let gamma = mmfit_fit_gamma(fit);
        assert!((gamma - 0.9994).abs() <= 2e-4, "gamma {gamma}");
        assert_eq!(mmfit_fit_n(fit), 5976);
        assert_eq!(mmfit_fit_cells(fit), 7);
        assert_eq!(mmfit_fit_params(fit), 3);

        let mut pi = [0.0f64; 7];
        assert_eq!(mmfit_fit_pi(fit, pi.as_mut_ptr(), pi.len()), MmfitStatus::Ok);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // Wrong buffer length is rejected, not written out of bounds.
        let mut short = [0.0f64; 3];
        assert_eq!(
            mmfit_fit_pi(fit, short.as_mut_ptr(), short.len()),
            MmfitStatus::Validation
        );

        let mut theta = [0.0f64; 3];
        assert_eq!(
            mmfit_fit_theta(fit, theta.as_mut_ptr(), theta.len()),
            MmfitStatus::Ok
        );
        assert!(theta.iter().all(|v| *v < 0.0));

        // Bisection route agrees.
        let mut fit2: *mut MmfitFit = ptr::null_mut();
        let status = mmfit_fit_curved(design, BASKET.as_ptr(), BASKET.len(), 1, &mut fit2);
        assert_eq!(status, MmfitStatus::Ok);
        assert!((mmfit_fit_gamma(fit2) - gamma).abs() <= 1e-6);

        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        assert_eq!(
            mmfit_fit_feasible_range(fit, &mut lo, &mut hi),
            MmfitStatus::Ok
        );
        assert!((lo - 0.765).abs() <= 0.005, "lower {lo}");
        assert!((hi - 1.162).abs() <= 0.005, "upper {hi}");

        mmfit_fit_free(fit);
        mmfit_fit_free(fit2);
        mmfit_design_free(design);
    }
}

#[test]
fn buffer_constructor_matches_the_csv_route() {
    unsafe {
        #[rustfmt::skip]
        let rows: [f64; 21] = [
            0.0, 0.0, 1.0,
            0.0, 1.0, 0.0,
            0.0, 1.0, 1.0,
            1.0, 0.0, 0.0,
            1.0, 0.0, 1.0,
            1.0, 1.0, 0.0,
            1.0, 1.0, 1.0,
        ];
        let mut design: *mut MmfitDesign = ptr::null_mut();
        let status = mmfit_design_new(7, 3, rows.as_ptr(), &mut design);
        assert_eq!(status, MmfitStatus::Ok);
        assert_eq!(mmfit_design_rows(design), 7);
        assert_eq!(mmfit_design_cols(design), 3);

        let mut fit: *mut MmfitFit = ptr::null_mut();
        let status = mmfit_fit_curved(design, BASKET.as_ptr(), BASKET.len(), 0, &mut fit);
        assert_eq!(status, MmfitStatus::Ok);
        let gamma = mmfit_fit_gamma(fit);
        let alpha = mmfit_fit_alpha(fit);
        assert!((alpha - (1.0 / gamma - 1.0)).abs() <= 1e-15);
        assert!(mmfit_fit_loglik(fit) < 0.0);
        mmfit_fit_free(fit);
        mmfit_design_free(design);

        // A non-binary buffer is rejected at validation.
        let mut bad = rows;
        bad[0] = 2.0;
        let mut handle: *mut MmfitDesign = ptr::null_mut();
        let status = mmfit_design_new(7, 3, bad.as_ptr(), &mut handle);
        assert_eq!(status, MmfitStatus::Validation);
        assert!(handle.is_null());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    unsafe {
        let bytes = [0x31u8, 0x2c, 0xff, 0x00]; // "1," then a stray byte
        let mut handle: *mut MmfitDesign = ptr::null_mut();
        let status = mmfit_design_parse_csv(bytes.as_ptr().cast(), &mut handle);
        assert_eq!(status, MmfitStatus::InvalidUtf8);
    }
}

#[test]
fn test_report_json_is_well_formed() {
    unsafe {
        let design = parse_design(BASKET_DESIGN_CSV);
        let mut json_ptr: *mut std::ffi::c_char = ptr::null_mut();
        let status =
            mmfit_test_report_json(design, BASKET.as_ptr(), BASKET.len(), 0.95, &mut json_ptr);
        assert_eq!(status, MmfitStatus::Ok);
        let json = CStr::from_ptr(json_ptr).to_str().unwrap();
        let value: serde_json::Value = serde_json::from_str(json).unwrap();
        assert!(value["d_l"]["value"].as_f64().unwrap() > 9.0);
        assert_eq!(value["d_m"]["df"].as_u64().unwrap(), 1);
        let interval = value["gamma_interval"].as_array().unwrap();
        assert!((interval[0].as_f64().unwrap() - 0.9923).abs() <= 5e-4);
        mmfit_string_free(json_ptr);
        mmfit_design_free(design);
    }
}

#[test]
fn error_paths_set_status_and_message() {
    unsafe {
        // Null pointers.
        let status = mmfit_design_parse_csv(ptr::null(), ptr::null_mut());
        assert_eq!(status, MmfitStatus::NullPointer);

        // Unparseable design.
        let text = CString::new("1,0\n0,2\n").unwrap();
        let mut handle: *mut MmfitDesign = ptr::null_mut();
        let status = mmfit_design_parse_csv(text.as_ptr(), &mut handle);
        assert_eq!(status, MmfitStatus::Parse);
        assert!(handle.is_null());
        let msg_ptr = mmfit_last_error_message();
        assert!(!msg_ptr.is_null());
        let msg = CStr::from_ptr(msg_ptr).to_str().unwrap().to_string();
        assert!(msg.contains("0/1"), "{msg}");
        mmfit_string_free(msg_ptr);

        // Valid 0/1 text but invalid design (zero row).
        let text = CString::new("1,0\n0,0\n0,1\n").unwrap();
        let status = mmfit_design_parse_csv(text.as_ptr(), &mut handle);
        assert_eq!(status, MmfitStatus::Validation);

        // Degenerate counts.
        let design = parse_design(BASKET_DESIGN_CSV);
        let zeros = [0u64; 7];
        let mut fit: *mut MmfitFit = ptr::null_mut();
        let status = mmfit_fit_curved(design, zeros.as_ptr(), zeros.len(), 0, &mut fit);
        assert_eq!(status, MmfitStatus::Validation);
        assert!(fit.is_null());
        mmfit_design_free(design);

        // Accessors tolerate NULL.
        assert!(mmfit_fit_gamma(ptr::null()).is_nan());
        assert_eq!(mmfit_design_rows(ptr::null()), 0);
        mmfit_string_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("mmfit.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for symbol in [
        "mmfit_design_parse_csv",
        "mmfit_design_new",
        "mmfit_fit_curved",
        "mmfit_fit_gamma",
        "mmfit_fit_feasible_range",
        "mmfit_test_report_json",
        "mmfit_string_free",
        "mmfit_last_error_message",
        "MMFIT_STATUS_FEASIBILITY",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
    // Opaque handles stay opaque.
    assert!(text.contains("typedef struct MmfitDesign MmfitDesign;"));
    assert!(text.contains("typedef struct MmfitFit MmfitFit;"));
}
