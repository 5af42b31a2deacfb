use std::ffi::{CStr, CString};
use std::ptr;

use rbml_ffi::*;

const CONFIG: &str = r#"{"problem": {"kind": "heat_test", "nx": 6, "ny": 6, "num_time_nodes": 20}}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rbml_last_error()) }.to_string_lossy().into_owned()
}

fn new_fom() -> *mut RbmlFom {
    let json = CString::new(CONFIG).unwrap();
    let mut fom = ptr::null_mut();
    assert_eq!(unsafe { rbml_fom_new(json.as_ptr(), &mut fom) }, RbmlStatus::Ok);
    assert!(!fom.is_null());
    fom
}

#[test]
fn fom_round_trip() {
    let fom = new_fom();
    unsafe {
        assert_eq!(rbml_fom_param_dim(fom), 3);
        assert_eq!(rbml_fom_num_time_nodes(fom), 20);
        assert_eq!(rbml_fom_dim(fom), 49);
        let mu = [0.5, 0.5, 1.0];
        let mut out = vec![f64::NAN; 20];
        assert_eq!(rbml_fom_eval_output(fom, mu.as_ptr(), 3, out.as_mut_ptr(), out.len()), RbmlStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(out[0], 0.0);
        assert!(out[19] > 0.0);
        rbml_fom_free(fom);
    }
}

#[test]
fn errors_are_reported() {
    let fom = new_fom();
    unsafe {
        let mut out = vec![0.0; 20];
        let mu = [0.5, 0.5];
        assert_eq!(rbml_fom_eval_output(fom, mu.as_ptr(), 2, out.as_mut_ptr(), 20), RbmlStatus::InvalidArgument);
        assert!(last_error().contains("dimension"), "{}", last_error());
        let mu = [0.5, 0.5, 1.0];
        assert_eq!(rbml_fom_eval_output(fom, mu.as_ptr(), 3, out.as_mut_ptr(), 19), RbmlStatus::BufferTooSmall);
        assert_eq!(rbml_fom_eval_output(ptr::null(), mu.as_ptr(), 3, out.as_mut_ptr(), 20), RbmlStatus::NullPointer);

        let bad = CString::new(r#"{"problem": {"kind": "heat_test"}, "seed": "x"}"#).unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(rbml_fom_new(bad.as_ptr(), &mut other), RbmlStatus::Config);
        assert!(other.is_null());
        assert!(last_error().contains("seed"));
        assert_eq!(rbml_fom_new(ptr::null(), &mut other), RbmlStatus::NullPointer);

        assert_eq!(rbml_fom_param_dim(ptr::null()), 0);
        assert!(rbml_model_epsilon(ptr::null()).is_nan());
        rbml_fom_free(ptr::null_mut());
        rbml_model_free(ptr::null_mut());
        rbml_fom_free(fom);
    }
}

#[test]
fn adaptive_model_matches_fom_within_tolerance() {
    let fom = new_fom();
    let json = CString::new(CONFIG).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(rbml_model_new(fom, json.as_ptr(), 1e-3, &mut model), RbmlStatus::Ok);
        assert_eq!(rbml_model_epsilon(model), 1e-3);
        let dt = 1.0 / 19.0;
        let mut tiers = Vec::new();
        for mu in [[0.3, 0.6, 0.9], [0.35, 0.55, 1.0], [0.3, 0.6, 0.9]] {
            let mut truth = vec![0.0; 20];
            let mut approx = vec![0.0; 20];
            let mut tier = -1;
            assert_eq!(rbml_fom_eval_output(fom, mu.as_ptr(), 3, truth.as_mut_ptr(), 20), RbmlStatus::Ok);
            assert_eq!(rbml_model_eval_output(model, mu.as_ptr(), 3, approx.as_mut_ptr(), 20, &mut tier), RbmlStatus::Ok);
            let err = truth.iter().zip(&approx).map(|(a, b)| dt * (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-3, "{err}");
            tiers.push(tier);
        }
        assert_eq!(tiers[0], 2);
        assert_ne!(tiers[2], 2, "a repeated parameter is served by a surrogate");
        assert_eq!(rbml_model_num_evals(model), 3);
        assert!(rbml_model_basis_dim(model) > 0);
        rbml_model_free(model);
        rbml_fom_free(fom);
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rbml.h")).unwrap();
    for name in [
        "rbml_last_error",
        "rbml_fom_new",
        "rbml_fom_free",
        "rbml_fom_eval_output",
        "rbml_model_new",
        "rbml_model_eval_output",
        "rbml_model_free",
        "typedef struct RbmlFom RbmlFom",
        "RbmlStatus_Ok = 0",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
