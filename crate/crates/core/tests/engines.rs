mod common;

use potvit::intengine::{int_accuracy, int_forward, QuantizedModel};
use potvit::mpsearch::BitConfig;
use potvit::quantizer::{CodeTrace, FakeQuantModel, QuantConfig};
use potvit::refmodel::{accuracy, forward, ModelConfig};

fn mixed_bits(n: usize) -> Vec<u32> {
    (0..n).map(|i| if i % 3 == 1 { 4 } else { 8 }).collect()
}

#[test]
fn integer_engine_matches_fake_quant_codes() {
    let t = common::toy(0);
    let qp = common::qparams(&t, &QuantConfig::default());
    let fq = FakeQuantModel::new(&t.model, &qp).unwrap();
    let cfg = &t.model.config;
    let n = cfg.weight_layers().len();
    for bits in [vec![8; n], vec![4; n], mixed_bits(n)] {
        let qm = QuantizedModel::build(&t.model, &qp, &BitConfig::new(cfg, bits.clone()).unwrap()).unwrap();
        let mut total = 0;
        for s in t.val.iter().take(40) {
            let (mut a, mut b) = (CodeTrace::default(), CodeTrace::default());
            let logits = fq.forward(&s.as_mat(), &bits, Some(&mut a)).unwrap();
            let out = int_forward(&qm, &s.x, Some(&mut b)).unwrap();
            let bad = a.mismatches(&b);
            assert!(bad.is_empty(), "bits {bits:?}: {bad:?}");
            assert_eq!(logits, out.dequantize());
            total += a.total_codes();
        }
        assert!(total > 0);
    }
}

#[test]
fn quantized_model_round_trips_through_disk() {
    let t = common::toy(1);
    let qp = common::qparams(&t, &QuantConfig::default());
    let n = t.model.config.weight_layers().len();
    let qm = QuantizedModel::build(&t.model, &qp, &BitConfig::new(&t.model.config, mixed_bits(n)).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    qm.save(dir.path()).unwrap();
    let back = QuantizedModel::load(dir.path()).unwrap();
    assert_eq!(back, qm);
    std::fs::write(dir.path().join("layers.json"), "[]").unwrap();
    assert!(QuantizedModel::load(dir.path()).is_err());
}

#[test]
fn wide_float_nonlinear_path_tracks_float_model() {
    let t = common::toy(2);
    let qc = QuantConfig {
        act_bits: 32,
        attn_bits: 32,
        weight_bit_choices: vec![32],
        float_nonlinear: true,
        attn_log2: false,
        ..Default::default()
    };
    let qp = common::qparams(&t, &qc);
    let fq = FakeQuantModel::new(&t.model, &qp).unwrap();
    let n = t.model.config.weight_layers().len();
    for s in t.val.iter().take(20) {
        let got = fq.forward(&s.as_mat(), &vec![32; n], None).unwrap();
        let (want, _) = forward(&t.model, &s.x).unwrap();
        for (g, w) in got.iter().zip(want.to_f64()) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }
}

#[test]
fn w8a8_close_to_float_accuracy() {
    let t = common::toy(0);
    let qp = common::qparams(&t, &QuantConfig::default());
    let cfg: &ModelConfig = &t.model.config;
    let w = t.model.weights().unwrap();
    let pairs: Vec<_> = t.val.iter().map(|s| (s.as_mat(), s.label)).collect();
    let float = accuracy(cfg, &w, &pairs);
    let qm = QuantizedModel::build(&t.model, &qp, &BitConfig::uniform(cfg, 8).unwrap()).unwrap();
    let int = int_accuracy(&qm, &t.val).unwrap();
    assert!(float - int <= 0.02, "float {float} int {int}");
}
