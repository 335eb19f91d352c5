use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use lungseg::losses::{tversky_loss, LossConfig};
use lungseg_ffi::*;

fn last_error() -> String {
    let p = ls_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn default_config_matches_the_library() {
    let mut cfg = LsLossConfig::from(LossConfig { a: 9.0, ..Default::default() });
    assert_eq!(unsafe { ls_loss_config_default(&mut cfg) }, LsStatus::Ok);
    assert_eq!(LossConfig::from(cfg), LossConfig::default());
}

#[test]
fn loss_values_and_gradients() {
    let y = [1.0, 1.0, 0.0, 0.0];
    let yhat = [0.5; 4];
    let mut cfg = LsLossConfig::from(LossConfig { alpha: 0.5, beta: 0.5, epsilon: 1e-12, ..Default::default() });
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    let s = unsafe { ls_loss(LsLossKind::Tv, y.as_ptr(), yhat.as_ptr(), 4, &cfg, &mut value, grad.as_mut_ptr()) };
    assert_eq!(s, LsStatus::Ok);
    assert!((value - 0.5).abs() < 1e-11);

    // central differences of the library loss
    let lib = |p: &[f64]| {
        let t = |v: &[f64]| candle_core::Tensor::from_slice(v, 4, &candle_core::Device::Cpu).unwrap();
        tversky_loss(&t(&y), &t(p), &LossConfig::from(cfg)).unwrap().to_scalar::<f64>().unwrap()
    };
    for i in 0..4 {
        let (mut plus, mut minus) = (yhat, yhat);
        plus[i] += 1e-6;
        minus[i] -= 1e-6;
        let fd = (lib(&plus) - lib(&minus)) / 2e-6;
        assert!((grad[i] - fd).abs() < 1e-7, "{i}: {} vs {fd}", grad[i]);
    }

    // null config means defaults, null grad is allowed
    let s = unsafe { ls_loss(LsLossKind::Kltv, y.as_ptr(), yhat.as_ptr(), 4, ptr::null(), &mut value, ptr::null_mut()) };
    assert_eq!(s, LsStatus::Ok);
    assert!(value > 0.0);

    cfg.alpha = -1.0;
    let s = unsafe { ls_loss(LsLossKind::Tv, y.as_ptr(), yhat.as_ptr(), 4, &cfg, &mut value, ptr::null_mut()) };
    assert_eq!(s, LsStatus::InvalidArgument);
    assert!(last_error().contains("alpha"), "{}", last_error());
}

#[test]
fn adversarial_losses() {
    let mut v = 0.0;
    assert_eq!(unsafe { ls_segmentor_adv_loss([0.5].as_ptr(), 1, &mut v) }, LsStatus::Ok);
    assert!((v - 2f64.ln()).abs() < 1e-12);
    assert_eq!(
        unsafe { ls_discriminator_unsup_loss([0.5].as_ptr(), [0.5].as_ptr(), 1, &mut v) },
        LsStatus::Ok
    );
    assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(unsafe { ls_segmentor_adv_loss([0.5].as_ptr(), 0, &mut v) }, LsStatus::InvalidArgument);
}

#[test]
fn metrics() {
    let truth = [1u8, 1, 0, 0];
    let pred = [1u8, 0, 0, 0];
    let mut o = LsOverlap::default();
    assert_eq!(unsafe { ls_overlap_metrics(truth.as_ptr(), pred.as_ptr(), 2, 2, &mut o) }, LsStatus::Ok);
    assert!((o.ds - 2.0 / 3.0).abs() < 1e-12);
    assert!((o.ji - 0.5).abs() < 1e-12);
    assert_eq!(o.sp, 1.0);

    let mut hd = -1.0;
    assert_eq!(unsafe { ls_avg_hausdorff(truth.as_ptr(), truth.as_ptr(), 2, 2, &mut hd) }, LsStatus::Ok);
    assert_eq!(hd, 0.0);

    assert_eq!(
        unsafe { ls_overlap_metrics(truth.as_ptr(), ptr::null(), 2, 2, &mut o) },
        LsStatus::NullPointer
    );

    let img: Vec<f64> = (0..256).map(|i| f64::from(i % 16) / 15.0).collect();
    let mut s = 0.0;
    assert_eq!(unsafe { ls_ssim(img.as_ptr(), img.as_ptr(), 16, 16, &mut s) }, LsStatus::Ok);
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn null_pointers_are_reported() {
    let mut v = 0.0;
    let s = unsafe { ls_loss(LsLossKind::Tv, ptr::null(), [0.5].as_ptr(), 1, ptr::null(), &mut v, ptr::null_mut()) };
    assert_eq!(s, LsStatus::NullPointer);
    assert!(last_error().contains('y'));
    assert_eq!(unsafe { ls_segmentor_adv_loss([0.5].as_ptr(), 1, ptr::null_mut()) }, LsStatus::NullPointer);
    let mut n = 0;
    assert_eq!(unsafe { ls_segmentor_num_params(ptr::null(), &mut n) }, LsStatus::NullPointer);
    unsafe {
        ls_segmentor_free(ptr::null_mut());
        ls_dataset_free(ptr::null_mut());
    }
    // a successful call clears the message
    assert_eq!(unsafe { ls_segmentor_adv_loss([0.5].as_ptr(), 1, &mut v) }, LsStatus::Ok);
    assert!(ls_last_error().is_null());
}

#[test]
fn synthetic_dataset_handle() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ls_synth_dataset(4, 7, 32, &mut ds) }, LsStatus::Ok);
    let (mut len, mut size) = (0, 0);
    assert_eq!(unsafe { ls_dataset_shape(ds, &mut len, &mut size) }, LsStatus::Ok);
    assert_eq!((len, size), (4, 32));

    let reference = lungseg::data::synth_dataset(4, 7, 32).unwrap();
    let mut image = vec![0f32; 32 * 32];
    let mut mask = vec![0u8; 32 * 32];
    let mut label = 0;
    for i in 0..4 {
        unsafe {
            assert_eq!(ls_dataset_image(ds, i, image.as_mut_ptr()), LsStatus::Ok);
            assert_eq!(ls_dataset_mask(ds, i, mask.as_mut_ptr()), LsStatus::Ok);
            assert_eq!(ls_dataset_label(ds, i, &mut label), LsStatus::Ok);
        }
        let s = &reference.samples[i];
        assert_eq!(image, s.image.iter().copied().collect::<Vec<_>>());
        assert_eq!(mask, s.mask.as_ref().unwrap().iter().copied().collect::<Vec<_>>());
        assert_eq!(label, s.class_label.unwrap() as i32);
    }
    assert_eq!(unsafe { ls_dataset_image(ds, 4, image.as_mut_ptr()) }, LsStatus::InvalidArgument);
    assert_eq!(unsafe { ls_synth_dataset(4, 7, 30, &mut ds) }, LsStatus::InvalidArgument);
    unsafe { ls_dataset_free(ds) };
}

#[test]
fn segmentor_handle_round_trip() {
    let name = CString::new("PPAU-Net").unwrap();
    let mut seg = ptr::null_mut();
    assert_eq!(unsafe { ls_segmentor_new(name.as_ptr(), 32, 2, 5, &mut seg) }, LsStatus::Ok);
    let mut size = 0;
    let mut params = 0;
    unsafe {
        assert_eq!(ls_segmentor_input_size(seg, &mut size), LsStatus::Ok);
        assert_eq!(ls_segmentor_num_params(seg, &mut params), LsStatus::Ok);
    }
    assert_eq!(size, 32);
    assert!(params > 0);

    let images: Vec<f32> = (0..2 * 32 * 32).map(|i| (i % 97) as f32 / 96.0).collect();
    let mut probs = vec![0f32; images.len()];
    let s = unsafe { ls_segmentor_predict(seg, images.as_ptr(), 2, 32, probs.as_mut_ptr()) };
    assert_eq!(s, LsStatus::Ok);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    let s = unsafe { ls_segmentor_predict(seg, images.as_ptr(), 1, 64, probs.as_mut_ptr()) };
    assert_eq!(s, LsStatus::Shape);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.safetensors").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ls_segmentor_save(seg, path.as_ptr()) }, LsStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { ls_segmentor_load(path.as_ptr(), &mut loaded) }, LsStatus::Ok);
    let mut again = vec![0f32; images.len()];
    let s = unsafe { ls_segmentor_predict(loaded, images.as_ptr(), 2, 32, again.as_mut_ptr()) };
    assert_eq!(s, LsStatus::Ok);
    assert_eq!(probs, again);

    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ls_segmentor_load(missing.as_ptr(), &mut loaded) }, LsStatus::Io);
    let bogus = CString::new("W-Net").unwrap();
    assert_eq!(unsafe { ls_segmentor_new(bogus.as_ptr(), 32, 2, 0, &mut loaded) }, LsStatus::InvalidArgument);
    unsafe {
        ls_segmentor_free(seg);
        ls_segmentor_free(loaded);
    }
}

#[test]
fn status_names_and_version() {
    let name = unsafe { CStr::from_ptr(ls_status_name(LsStatus::Shape)) };
    assert_eq!(name.to_str().unwrap(), "shape mismatch");
    let v = unsafe { CStr::from_ptr(ls_version()) };
    assert_eq!(v.to_str().unwrap(), lungseg::VERSION);
}

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(manifest().join("include/lungseg.h")).unwrap();
    let mut exported = Vec::new();
    for entry in std::fs::read_dir(manifest().join("src")).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        for line in text.lines() {
            if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
                exported.push(rest.split('(').next().unwrap().to_string());
            }
        }
    }
    assert!(exported.len() >= 20, "{exported:?}");
    for f in exported {
        let declared = header
            .match_indices(&format!("{f}("))
            .any(|(i, _)| matches!(header.as_bytes()[i - 1], b' ' | b'*'));
        assert!(declared, "{f} missing from header");
    }
}

fn staticlib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary> -> target/<profile>
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("liblungseg_ffi.a");
    lib.is_file().then_some(lib)
}

#[test]
fn c_program_compiles_against_the_header() {
    let include = manifest().join("include");
    let source = manifest().join("tests/c/smoke.c");
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&source)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());

    let Some(lib) = staticlib() else {
        eprintln!("static library not built; skipping link step");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c11", "-O1", "-I"])
        .arg(&include)
        .arg(&source)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
