use std::ffi::{CStr, CString};
use std::ptr;

use srl::diff::Tensor;
use srl::io::Checkpoint;
use srl::nn::{Activation, Model};
use srl_ffi::*;

fn checkpoint() -> Checkpoint {
    let model = Model::new(&[3, 8, 4], Activation::Tanh, 5).unwrap();
    Checkpoint { model, seed: 5, epoch: 2, target_mean: 10.0, target_std: 2.0 }
}

fn last_error() -> String {
    let p = srl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_from_bytes_matches_rust_predictions() {
    let ck = checkpoint();
    let bytes = ck.to_bytes().unwrap();
    let mut m: *mut SrlModel = ptr::null_mut();
    assert_eq!(unsafe { srl_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut m) }, SrlStatus::Ok);
    assert!(srl_last_error_message().is_null());
    assert_eq!(unsafe { srl_model_input_dim(m) }, 3);
    assert_eq!(unsafe { srl_model_rep_dim(m) }, 4);

    let x = [0.1, -0.2, 0.3, 1.0, 0.5, -1.5];
    let mut preds = [0.0; 2];
    assert_eq!(unsafe { srl_model_predict(m, x.as_ptr(), 2, 3, preds.as_mut_ptr(), 2) }, SrlStatus::Ok);
    let reloaded = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
    let expected = reloaded.predict(&Tensor::matrix(2, 3, x.to_vec()).unwrap()).unwrap();
    assert_eq!(preds.to_vec(), expected);

    let mut z = [0.0; 8];
    assert_eq!(unsafe { srl_model_encode(m, x.as_ptr(), 2, 3, z.as_mut_ptr(), 8) }, SrlStatus::Ok);
    for row in z.chunks(4) {
        let n: f64 = row.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }
    unsafe { srl_model_free(m) };
}

#[test]
fn model_load_from_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    checkpoint().save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m: *mut SrlModel = ptr::null_mut();
    assert_eq!(unsafe { srl_model_load(c.as_ptr(), &mut m) }, SrlStatus::Ok);
    assert!(!m.is_null());
    unsafe { srl_model_free(m) };

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { srl_model_load(missing.as_ptr(), &mut m) }, SrlStatus::Io);
    assert!(last_error().contains("nope.bin"));
}

#[test]
fn errors_map_to_status_codes() {
    let mut m: *mut SrlModel = ptr::null_mut();
    let junk = b"not a checkpoint\n";
    assert_eq!(unsafe { srl_model_from_bytes(junk.as_ptr(), junk.len(), &mut m) }, SrlStatus::Schema);
    assert!(m.is_null());
    assert_eq!(unsafe { srl_model_load(ptr::null(), &mut m) }, SrlStatus::NullPointer);
    assert!(last_error().contains("path"));

    let bytes = checkpoint().to_bytes().unwrap();
    assert_eq!(unsafe { srl_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut m) }, SrlStatus::Ok);
    let x = [0.0; 4];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { srl_model_predict(m, x.as_ptr(), 2, 2, out.as_mut_ptr(), 2) }, SrlStatus::Shape);
    let x = [0.5; 6];
    assert_eq!(unsafe { srl_model_predict(m, x.as_ptr(), 2, 3, out.as_mut_ptr(), 1) }, SrlStatus::Shape);
    assert_eq!(unsafe { srl_model_predict(ptr::null(), x.as_ptr(), 2, 3, out.as_mut_ptr(), 2) }, SrlStatus::NullPointer);
    unsafe { srl_model_free(m) };
    unsafe { srl_model_free(ptr::null_mut()) };
}

#[test]
fn sphere_and_geometry() {
    let mut s: *mut SrlSphere = ptr::null_mut();
    assert_eq!(unsafe { srl_sphere_new(500, 3, 9, &mut s) }, SrlStatus::Ok);
    let mut pts = vec![0.0; 1500];
    assert_eq!(unsafe { srl_sphere_points(s, pts.as_mut_ptr(), pts.len()) }, SrlStatus::Ok);
    let rust = srl::geometry::sample_hypersphere(500, 3, 9).unwrap();
    assert_eq!(pts, rust.points.data());

    let c = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
    let mut env = 0.0;
    assert_eq!(unsafe { srl_enveloping_loss(s, c.as_ptr(), 3, 3, &mut env) }, SrlStatus::Ok);
    let expected = srl::geometry::enveloping_loss(&rust, &Tensor::matrix(3, 3, c.to_vec()).unwrap()).unwrap();
    assert_eq!(env, expected);

    let mut cov = 0.0;
    assert_eq!(unsafe { srl_coverage(s, c.as_ptr(), 3, 3, 0.9, &mut cov) }, SrlStatus::Ok);
    assert!((0.0..=1.0).contains(&cov));
    assert_eq!(unsafe { srl_coverage(s, c.as_ptr(), 3, 3, 1.5, &mut cov) }, SrlStatus::InvalidArgument);

    let labels = [0.0, 1.0, 2.0];
    let mut h = 0.0;
    assert_eq!(unsafe { srl_homogeneity_loss(c.as_ptr(), labels.as_ptr(), 3, 3, &mut h) }, SrlStatus::Ok);
    assert!((h - 4.0).abs() < 1e-12);
    assert_eq!(unsafe { srl_sphere_new(10, 0, 1, &mut s) }, SrlStatus::InvalidArgument);
    unsafe { srl_sphere_free(s) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/srl.h")).unwrap();
    for name in [
        "srl_last_error_message",
        "srl_version",
        "srl_model_load",
        "srl_model_from_bytes",
        "srl_model_free",
        "srl_model_input_dim",
        "srl_model_rep_dim",
        "srl_model_predict",
        "srl_model_encode",
        "srl_sphere_new",
        "srl_sphere_free",
        "srl_sphere_points",
        "srl_enveloping_loss",
        "srl_coverage",
        "srl_homogeneity_loss",
        "typedef struct SrlModel SrlModel",
        "SrlStatus_Ok = 0",
    ] {
        assert!(header.contains(name), "{name} missing from the header");
    }
    let v = unsafe { CStr::from_ptr(srl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
