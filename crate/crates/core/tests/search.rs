mod common;

use std::time::Instant;

use potvit::mpsearch::{
    brute_force_search, estimate_traces, EvalCache, evo_search, finite_difference_trace, hessian_matvec, hutchinson_trace, layer_params,
    model_size_mb, pareto_allocate, LayerCosts, Probe, SearchConfig, VitLoss,
};
use potvit::numerics::Rng;
use potvit::quantizer::{FakeQuantModel, QuantConfig};

#[test]
fn vit_hessian_is_symmetric() {
    let t = common::toy(0);
    let loss = VitLoss::new(&t.model, &t.calib[..32]).unwrap();
    let mut rng = Rng::new(5);
    let head = 13;
    let n = loss_len(&loss, head);
    let z1: Vec<f64> = (0..n).map(|_| rng.rademacher()).collect();
    let z2: Vec<f64> = (0..n).map(|_| rng.rademacher()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a = dot(&z1, &hessian_matvec(&loss, head, &z2).unwrap());
    let b = dot(&z2, &hessian_matvec(&loss, head, &z1).unwrap());
    assert!((a - b).abs() <= 1e-2 * a.abs().max(b.abs()), "{a} vs {b}");
}

fn loss_len(loss: &VitLoss, block: usize) -> usize {
    use potvit::mpsearch::BlockLoss;
    loss.params(block).len()
}

#[test]
fn hutchinson_tracks_finite_difference_trace_on_small_layer() {
    let t = common::toy(0);
    let loss = VitLoss::new(&t.model, &t.calib[..32]).unwrap();
    let head = 13;
    assert!(loss_len(&loss, head) <= 512);
    let start = Instant::now();
    let exact = finite_difference_trace(&loss, head).unwrap();
    let est = hutchinson_trace(&loss, head, 256, &mut Rng::new(1), Probe::Rademacher).unwrap();
    eprintln!("head trace {est} vs {exact} in {:?}", start.elapsed());
    assert!((est - exact).abs() <= 0.1 * exact.abs(), "{est} vs {exact}");
}

#[test]
fn coarse_to_fine_search_reaches_brute_force_accuracy() {
    let t = common::toy_one_block(0);
    let qp = common::qparams(&t, &QuantConfig::default());
    let fq = FakeQuantModel::new(&t.model, &qp).unwrap();
    let cfg = &t.model.config;
    let params = layer_params(cfg);
    assert_eq!(params.len(), 8);
    let start = Instant::now();
    let loss = VitLoss::new(&t.model, &t.calib[..32]).unwrap();
    let traces = estimate_traces(&loss, 8, 0, Probe::Rademacher).unwrap();
    eprintln!("traces {:?} in {:?}", traces.traces, start.elapsed());
    let costs = LayerCosts::from_bank(traces.traces, &fq.bank, params.clone()).unwrap();
    let budget = 0.5 * (model_size_mb(&params, &[4; 8]) + model_size_mb(&params, &[8; 8]));
    let cache = EvalCache::new(|b: &[u32]| fq.accuracy(&t.calib, b));
    let eval = |b: &[u32]| cache.get(b);
    let start = Instant::now();
    let oracle = brute_force_search(&params, budget, eval).unwrap();
    eprintln!("brute force {} at {:?} in {:?}", oracle.accuracy, oracle.bits, start.elapsed());
    let init: Vec<Vec<u32>> = pareto_allocate(&costs, budget, 25).unwrap().into_iter().map(|a| a.bits).collect();
    let hessian_only = eval(&init[0]).unwrap();
    let mut hits = 0;
    for seed in 0..10 {
        let sc = SearchConfig { seed, budget_mb: budget, ..Default::default() };
        let r = evo_search(&init, &params, eval, &sc).unwrap();
        assert!(r.accuracy >= hessian_only);
        hits += (r.accuracy >= oracle.accuracy) as usize;
    }
    eprintln!("hits {hits} hessian-only {hessian_only} in {:?}", start.elapsed());
    assert!(hits >= 9);
}
