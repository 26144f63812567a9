use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use potvit::intengine::{int_forward, QuantizedModel};
use potvit::mpsearch::BitConfig;
use potvit::quantizer::{calibrate, QuantConfig};
use potvit::refmodel::{train, DatasetConfig, ModelConfig, SyntheticDataset, TrainConfig};
use potvit_ffi::*;

fn build_model(dir: &Path) -> (QuantizedModel, SyntheticDataset) {
    let cfg = ModelConfig { layers: 1, ..Default::default() };
    let data = SyntheticDataset::generate(&DatasetConfig::default()).unwrap();
    let tc = TrainConfig { epochs: 2, ..Default::default() };
    let (model, _) = train(&cfg, &data.samples, &data.samples[..50], &tc).unwrap();
    let qp = calibrate(&model, &data.resample(50, 1).unwrap(), &QuantConfig::default()).unwrap();
    let n = cfg.weight_layers().len();
    let bits = (0..n).map(|i| if i % 2 == 0 { 8 } else { 4 }).collect();
    let qm = QuantizedModel::build(&model, &qp, &BitConfig::new(&cfg, bits).unwrap()).unwrap();
    qm.save(dir).unwrap();
    (qm, data)
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { potvit_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 1);
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn inference_matches_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let (qm, data) = build_model(dir.path());
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut m: *mut PotvitModel = ptr::null_mut();
    assert_eq!(unsafe { potvit_model_load(path.as_ptr(), &mut m) }, PotvitStatus::Ok);
    let (mut t, mut d, mut c) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { potvit_model_dims(m, &mut t, &mut d, &mut c) }, PotvitStatus::Ok);
    assert_eq!((t, d, c), (17, 16, 4));
    for s in data.samples.iter().take(10) {
        let (mut codes, mut exps, mut pred) = (vec![0i32; c], vec![0i32; c], usize::MAX);
        let x = s.x.data();
        let st = unsafe { potvit_model_infer(m, x.as_ptr(), x.len(), codes.as_mut_ptr(), exps.as_mut_ptr(), c, &mut pred) };
        assert_eq!(st, PotvitStatus::Ok);
        let want = int_forward(&qm, &s.x, None).unwrap();
        assert_eq!(codes, want.codes);
        assert_eq!(exps, want.exps);
        let l = want.dequantize();
        assert!(l.iter().all(|v| *v <= l[pred]));
    }
    unsafe { potvit_model_free(m) };
}

#[test]
fn simulation_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    build_model(dir.path());
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut m: *mut PotvitModel = ptr::null_mut();
    let mut a: *mut PotvitArch = ptr::null_mut();
    unsafe {
        assert_eq!(potvit_model_load(path.as_ptr(), &mut m), PotvitStatus::Ok);
        assert_eq!(potvit_arch_default(&mut a), PotvitStatus::Ok);
        let (mut c0, mut e0, mut c1, mut e1) = (0u64, 0.0, 0u64, 0.0);
        assert_eq!(potvit_model_simulate(m, a, 0, &mut c0, &mut e0), PotvitStatus::Ok);
        let all = POTVIT_PIPELINE_INTER | POTVIT_PIPELINE_INTRA;
        assert_eq!(potvit_model_simulate(m, ptr::null(), all, &mut c1, &mut e1), PotvitStatus::Ok);
        assert!(c1 < c0 && e1 <= e0 && e1 > 0.0);
        assert_eq!(potvit_model_simulate(m, a, 8, &mut c1, &mut e1), PotvitStatus::InvalidArgument);
        potvit_arch_free(a);
        potvit_model_free(m);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut m: *mut PotvitModel = ptr::null_mut();
    unsafe {
        assert_eq!(potvit_model_load(ptr::null(), &mut m), PotvitStatus::NullPointer);
        assert!(last_error().contains("dir"));
        let missing = CString::new("/definitely/not/here").unwrap();
        let st = potvit_model_load(missing.as_ptr(), &mut m);
        assert!(matches!(st, PotvitStatus::Io | PotvitStatus::Config), "{st:?}");
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        let mut a: *mut PotvitArch = ptr::null_mut();
        assert_ne!(potvit_arch_load(missing.as_ptr(), &mut a), PotvitStatus::Ok);
        assert_eq!(potvit_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), PotvitStatus::NullPointer);
        // Freeing null is a no-op.
        potvit_model_free(ptr::null_mut());
        potvit_arch_free(ptr::null_mut());
        // Truncation still terminates the string and reports the full length.
        let mut small = [1 as c_char; 4];
        let full = potvit_last_error(small.as_mut_ptr(), small.len());
        assert!(full > 4);
        assert_eq!(small[3], 0);
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    build_model(dir.path());
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut m: *mut PotvitModel = ptr::null_mut();
    unsafe {
        assert_eq!(potvit_model_load(path.as_ptr(), &mut m), PotvitStatus::Ok);
        let x = [0f32; 10];
        let (mut codes, mut exps) = ([0i32; 4], [0i32; 4]);
        let st = potvit_model_infer(m, x.as_ptr(), x.len(), codes.as_mut_ptr(), exps.as_mut_ptr(), 4, ptr::null_mut());
        assert_eq!(st, PotvitStatus::Shape);
        assert!(last_error().contains("expects 17x16"));
        potvit_model_free(m);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/potvit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["potvit_model_load", "potvit_model_infer", "potvit_model_simulate", "potvit_last_error", "POTVIT_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"potvit.h\"\nint main(void) { PotvitModel *m = 0; size_t t; \
         return potvit_model_dims(m, &t, 0, 0) == POTVIT_STATUS_OK ? 0 : (int)potvit_version()[0]; }\n",
    )
    .unwrap();
    let out = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"]).arg(header.parent().unwrap()).arg(&src).output();
    match out {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler, skipping syntax check: {e}"),
    }
}
