//! Drive the C ABI from Rust: load a real checkpoint through the handle
//! API, compare predictions with the core library, and exercise the error
//! paths.

use std::ffi::{c_char, CString};

use paleogp::baseline::BaselineModel;
use paleogp::checkpoint::Checkpoint;
use paleogp::kernels::{SpatialParams, TemporalParams};
use paleogp::sparse_gp::{
    build_prior_chain, natgrad_step, BoundingBox, Hyperparams, InducingStructure, ObsPoint,
    VariationalState,
};
use paleogp::training::FittedModel;

use paleogp_ffi::*;

fn trained_checkpoint(dir: &std::path::Path) -> (std::path::PathBuf, FittedModel) {
    let bbox = BoundingBox {
        lon_min: -10.0,
        lon_max: 40.0,
        lat_min: 35.0,
        lat_max: 70.0,
    };
    let inducing = InducingStructure::new(
        vec![(0.0, 44.0), (15.0, 55.0), (30.0, 65.0), (5.0, 60.0)],
        vec![-21.0, -11.0, -1.0],
        bbox,
    )
    .unwrap();
    let hyper = Hyperparams::new(
        SpatialParams::new(19.6, 13.2).unwrap(),
        TemporalParams::new(9.9, 2.9).unwrap(),
        1.6,
        inducing,
    )
    .unwrap();
    let jitter = 1e-6;
    let prior = build_prior_chain(&hyper, jitter).unwrap();
    let batch = vec![
        ObsPoint {
            lon: 2.0,
            lat: 47.0,
            t_ka: -15.0,
            y: 1.4,
        },
        ObsPoint {
            lon: 28.0,
            lat: 63.0,
            t_ka: -4.0,
            y: -2.1,
        },
    ];
    let v0 = VariationalState::prior(&prior).unwrap();
    let state = natgrad_step(&batch, &v0, &hyper, &prior, 2, 0.8).unwrap();
    let model = FittedModel {
        hyper,
        state,
        baseline: BaselineModel::constant(6.0),
        jitter,
    };
    let path = dir.join("checkpoint.toml");
    Checkpoint::from_model(&model, "test").save(&path).unwrap();
    (path, model)
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { paleogp_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(buf.len() - 1)]).into_owned()
}

#[test]
fn load_predict_free_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = trained_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut handle: *mut PaleogpModel = std::ptr::null_mut();
    let rc = unsafe { paleogp_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(rc, PALEOGP_OK, "load failed: {}", last_error());
    assert!(!handle.is_null());
    assert_eq!(unsafe { paleogp_model_num_inducing(handle) }, 4);

    let pts = [(3.0f64, 50.0, 9000.0), (25.0, 66.0, 500.0), (0.0, 40.0, 20000.0)];
    let flat: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
    let mut mean = vec![0.0; 3];
    let mut sd_lat = vec![0.0; 3];
    let mut sd_pred = vec![0.0; 3];
    let rc = unsafe {
        paleogp_model_predict(
            handle,
            flat.as_ptr(),
            3,
            mean.as_mut_ptr(),
            sd_lat.as_mut_ptr(),
            sd_pred.as_mut_ptr(),
        )
    };
    assert_eq!(rc, PALEOGP_OK);

    let expect = model.predict(&pts).unwrap();
    for i in 0..3 {
        assert_eq!(mean[i].to_bits(), expect[i].mean.to_bits());
        assert_eq!(sd_lat[i].to_bits(), expect[i].var_latent.sqrt().to_bits());
        assert_eq!(
            sd_pred[i].to_bits(),
            expect[i].var_observation.sqrt().to_bits()
        );
    }

    // null output pointers are allowed, and zero points is a no-op
    let rc = unsafe {
        paleogp_model_predict(
            handle,
            flat.as_ptr(),
            1,
            std::ptr::null_mut(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(rc, PALEOGP_OK);
    unsafe { paleogp_model_free(handle) };
}

#[test]
fn error_codes_and_messages() {
    // missing file -> I/O error
    let missing = CString::new("/nonexistent/checkpoint.toml").unwrap();
    let mut handle: *mut PaleogpModel = std::ptr::null_mut();
    let rc = unsafe { paleogp_model_load(missing.as_ptr(), &mut handle) };
    assert_eq!(rc, PALEOGP_ERR_IO);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/checkpoint.toml"));

    // malformed file -> input error
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is not a checkpoint").unwrap();
    let cbad = CString::new(bad.to_str().unwrap()).unwrap();
    let rc = unsafe { paleogp_model_load(cbad.as_ptr(), &mut handle) };
    assert_eq!(rc, PALEOGP_ERR_INPUT);
    assert!(!last_error().is_empty());

    // null arguments
    let rc = unsafe { paleogp_model_load(std::ptr::null(), &mut handle) };
    assert_eq!(rc, PALEOGP_ERR_INPUT);
    let rc = unsafe {
        paleogp_model_predict(
            std::ptr::null(),
            std::ptr::null(),
            0,
            std::ptr::null_mut(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(rc, PALEOGP_ERR_INPUT);

    // freeing null is a no-op
    unsafe { paleogp_model_free(std::ptr::null_mut()) };
}

#[test]
fn header_is_generated_with_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/paleogp.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for symbol in [
        "paleogp_model_load",
        "paleogp_model_predict",
        "paleogp_model_free",
        "paleogp_last_error",
        "PaleogpModel",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
