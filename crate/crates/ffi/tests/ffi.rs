use std::ffi::{CStr, CString};
use std::ptr;

use imago::agent::{episode_rollout, imagine, Model, Policy, Scene};
use imago::diff::Tensor;
use imago::flows::BnafInit;
use imago::harness::{save_checkpoint, Checkpoint, TrainConfig};
use imago_ffi::*;

fn config() -> TrainConfig {
    TrainConfig {
        height: 12,
        width: 12,
        glimpse: 4,
        timesteps: 2,
        latent_dim: 3,
        encoder_hidden: vec![10],
        decoder_hidden: vec![10],
        feature_dim: 5,
        embed_dim: 5,
        flow_multiplier: 2,
        flow_layers: 2,
        ..Default::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    path: CString,
    model: Model,
}

fn fixture() -> Fixture {
    let cfg = config();
    let model = Model::new(cfg.model_config(), 9, BnafInit::training()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &Checkpoint::from_store(0, cfg.to_text(), &model.store)).unwrap();
    Fixture {
        path: CString::new(path.to_str().unwrap()).unwrap(),
        _dir: dir,
        model,
    }
}

fn load(path: &CString) -> *mut ImagoModel {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { imago_model_load(path.as_ptr(), &mut handle) }, ImagoStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let p = imago_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn dims_and_imagine_match_the_library() {
    let f = fixture();
    let m = load(&f.path);
    let (mut h, mut w, mut g, mut d, mut c) = (0, 0, 0, 0, 0);
    assert_eq!(unsafe { imago_model_dims(m, &mut h, &mut w, &mut g, &mut d, &mut c) }, ImagoStatus::Ok);
    assert_eq!((h, w, g, d, c), (12, 12, 4, 3, 5));
    assert_eq!(
        unsafe { imago_model_dims(m, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), &mut c) },
        ImagoStatus::Ok
    );

    let feat = [0.1, -0.4, 0.3, 0.0, 0.9];
    let n = 7;
    let mut samples = vec![0.0; n * 144];
    let (mut mean, mut var) = (vec![0.0; 144], vec![0.0; 144]);
    let status = unsafe {
        imago_imagine(m, feat.as_ptr(), 5, n, 42, samples.as_mut_ptr(), samples.len(), mean.as_mut_ptr(), var.as_mut_ptr())
    };
    assert_eq!(status, ImagoStatus::Ok);
    let expect = imagine(&f.model, &Tensor::vector(feat.to_vec()), n, 42).unwrap();
    assert_eq!(samples, expect.samples.data());
    assert_eq!(mean, expect.mean.data());
    assert_eq!(var, expect.variance.data());

    let status = unsafe { imago_imagine(m, feat.as_ptr(), 5, n, 42, samples.as_mut_ptr(), 10, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(status, ImagoStatus::BufferTooSmall);
    assert!(!last_error().is_empty());
    let status = unsafe { imago_imagine(m, feat.as_ptr(), 4, n, 42, samples.as_mut_ptr(), samples.len(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(status, ImagoStatus::InvalidArgument);
    unsafe { imago_model_free(m) };
}

#[test]
fn rollout_matches_the_library() {
    let f = fixture();
    let m = load(&f.path);
    let px: Vec<f64> = (0..144).map(|i| ((i / 12 + i % 12) % 2) as f64).collect();
    let scene = Scene::new(12, 12, px.clone(), None).unwrap();
    let t = 3;
    let (mut means, mut vars, mut fix) = (vec![0.0; t * 144], vec![0.0; t * 144], vec![0usize; 2 * t]);
    let status = unsafe {
        imago_rollout(m, px.as_ptr(), 144, t, ImagoPolicy::Uncertainty, 6, 5, means.as_mut_ptr(), vars.as_mut_ptr(), fix.as_mut_ptr())
    };
    assert_eq!(status, ImagoStatus::Ok);
    let steps = episode_rollout(&f.model, &scene, t, Policy::Uncertainty, 6, 5).unwrap();
    for (k, s) in steps.iter().enumerate() {
        assert_eq!(&means[k * 144..(k + 1) * 144], s.hypotheses.mean.data());
        assert_eq!(&vars[k * 144..(k + 1) * 144], s.hypotheses.variance.data());
        assert!(s.state.mask.data().contains(&1.0));
    }
    assert!(fix.iter().all(|&v| (2..=10).contains(&v)));

    let bad = vec![2.0; 144];
    let status = unsafe {
        imago_rollout(m, bad.as_ptr(), 144, t, ImagoPolicy::Random, 6, 5, ptr::null_mut(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(status, ImagoStatus::InvalidArgument);
    unsafe { imago_model_free(m) };
}

#[test]
fn load_errors_are_reported() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { imago_model_load(ptr::null(), &mut handle) }, ImagoStatus::NullPointer);
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { imago_model_load(missing.as_ptr(), &mut handle) }, ImagoStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { imago_model_load(junk.as_ptr(), &mut handle) }, ImagoStatus::Format);
    assert_eq!(unsafe { imago_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, ImagoStatus::NullPointer);
    unsafe { imago_model_free(ptr::null_mut()) };
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/imago.h")).unwrap();
    for name in ["imago_model_load", "imago_model_free", "imago_model_dims", "imago_imagine", "imago_rollout", "imago_last_error"] {
        assert!(header.contains(&format!("{name}(")), "{name}");
    }
    assert!(header.contains("typedef struct ImagoModel ImagoModel;"));
}
