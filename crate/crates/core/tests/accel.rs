use potvit::accelsim::*;
use proptest::prelude::*;

fn deit(bits: u32) -> Workload {
    let d = VitDims::deit_tiny();
    Workload::vit(&d, &vec![bits; d.weight_layers()]).unwrap()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

#[test]
fn deit_tiny_speedups_near_reported() {
    let cfg = AcceleratorConfig::default();
    let w = deit(8);
    let seq = simulate_sequential(&w, &cfg).unwrap();
    let all = simulate_pipelined(&w, &cfg, PipelineFlags::ALL).unwrap();
    let (overall, attn, mlp) = speedups(&seq, &all);
    println!("speedups: attention {attn:.3}, mlp {mlp:.3}, overall {overall:.3}");
    assert!(within(attn, 1.79, 0.25), "attention {attn}");
    assert!(within(mlp, 1.15, 0.25), "mlp {mlp}");
    assert!(within(overall, 1.57, 0.25), "overall {overall}");
}

#[test]
fn oracle_agrees_on_deit_tiny() {
    let cfg = AcceleratorConfig::default();
    let w = deit(8);
    for f in PipelineFlags::all_modes() {
        let a = simulate_pipelined(&w, &cfg, f).unwrap();
        let e = event_driven_oracle(&w, &cfg, f).unwrap();
        assert_eq!(a.total_cycles, e.total_cycles, "{f}");
        assert_eq!(a.group_cycles, e.group_cycles, "{f}");
    }
}

#[test]
fn four_bit_weights_are_never_slower() {
    let cfg = AcceleratorConfig::default();
    for f in PipelineFlags::all_modes() {
        let w8 = simulate_pipelined(&deit(8), &cfg, f).unwrap().total_cycles;
        let w4 = simulate_pipelined(&deit(4), &cfg, f).unwrap().total_cycles;
        assert!(w4 <= w8, "{f}: {w4} > {w8}");
    }
}

#[test]
fn report_tables_every_mode() {
    let cfg = AcceleratorConfig::default();
    let w = deit(8);
    let runs = PipelineFlags::all_modes()
        .into_iter()
        .map(|f| {
            let r = simulate_pipelined(&w, &cfg, f).unwrap();
            energy(&w, &cfg, &r).unwrap()
        })
        .collect();
    let rep = SimReport::new(runs).unwrap();
    let csv = rep.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(rep.comparison(PipelineFlags::NONE).unwrap().speedup_overall, 1.0);
    assert!(rep.comparisons.iter().all(|c| c.energy_pj.is_some_and(|e| e > 0.0)));
    let json = serde_json::to_string(&rep).unwrap();
    let back: SimReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.comparisons.len(), 4);
}

#[test]
fn report_requires_baseline() {
    let cfg = AcceleratorConfig::default();
    let r = simulate_pipelined(&deit(8), &cfg, PipelineFlags::ALL).unwrap();
    assert!(SimReport::new(vec![r]).is_err());
}

const KINDS: [StageKind; 5] = [StageKind::Matmul, StageKind::ShiftMatmul, StageKind::Ln, StageKind::Softmax, StageKind::Requant];

/// Random stage lists; consecutive stages may share a chain.
fn workload() -> impl Strategy<Value = Workload> {
    prop::collection::vec((0usize..5, 1u64..300, 1u64..300, any::<bool>(), 0u8..3, any::<bool>()), 1..12).prop_flat_map(|specs| {
        (Just(specs), 1u64..40, 1u64..40).prop_map(|(specs, rows_a, rows_b)| {
            let mut stages: Vec<Stage> = Vec::new();
            let mut id = 0;
            let mut open: Option<Pipe> = None;
            for (i, (k, inner, cols, four, chain, static_w)) in specs.into_iter().enumerate() {
                let kind = KINDS[k];
                let pipe = match chain {
                    0 => {
                        open = None;
                        None
                    }
                    c => {
                        let kind = if c == 1 { PipeKind::Inter } else { PipeKind::Intra };
                        match open {
                            Some(p) if p.kind == kind => Some(p),
                            _ => {
                                id += 1;
                                open = Some(Pipe { kind, id });
                                open
                            }
                        }
                    }
                };
                let rows = match pipe {
                    Some(p) => if p.id % 2 == 0 { rows_a } else { rows_b },
                    None => if i % 2 == 0 { rows_a } else { rows_b },
                };
                let row_wise = matches!(kind, StageKind::Ln | StageKind::Softmax | StageKind::Requant);
                stages.push(Stage {
                    name: format!("s{i}"),
                    kind,
                    rows,
                    inner: if row_wise { cols } else { inner },
                    cols,
                    weight_bits: if four && kind == StageKind::Matmul { 4 } else { 8 },
                    static_weights: static_w,
                    group: if i % 3 == 0 { Group::Attention } else { Group::Mlp },
                    block: None,
                    pipe,
                });
            }
            Workload::new(stages).unwrap()
        })
    })
}

/// Whether some chain runs two of its stages on one chunk.
fn shares_chunk(w: &Workload) -> bool {
    let mut seen = std::collections::HashSet::new();
    w.stages.iter().any(|s| s.pipe.is_some_and(|p| !seen.insert((p, s.kind.chunk()))))
}

fn chunk_busy(r: &CostReport) -> u64 {
    let mut per = std::collections::BTreeMap::new();
    for s in &r.stages {
        *per.entry(s.kind.chunk()).or_insert(0u64) += s.busy_cycles;
    }
    per.values().copied().max().unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pipelining_never_hurts(w in workload()) {
        let cfg = AcceleratorConfig::default();
        let seq = simulate_sequential(&w, &cfg).unwrap();
        let inter = simulate_pipelined(&w, &cfg, PipelineFlags { inter: true, intra: false }).unwrap();
        let intra = simulate_pipelined(&w, &cfg, PipelineFlags { inter: false, intra: true }).unwrap();
        let all = simulate_pipelined(&w, &cfg, PipelineFlags::ALL).unwrap();
        prop_assert!(inter.total_cycles <= seq.total_cycles);
        prop_assert!(intra.total_cycles <= seq.total_cycles);
        prop_assert!(all.total_cycles <= inter.total_cycles.min(intra.total_cycles));
        // The same work is done in every mode; no chunk does two rows at once.
        for r in [&inter, &intra, &all] {
            prop_assert_eq!(r.stages.iter().map(|s| s.busy_cycles).sum::<u64>(), seq.total_cycles);
            prop_assert!(r.total_cycles >= chunk_busy(r));
            prop_assert_eq!(r.group_cycles.values().sum::<u64>(), r.total_cycles);
        }
    }

    #[test]
    fn analytic_matches_event_oracle(w in workload()) {
        let cfg = AcceleratorConfig::default();
        for f in PipelineFlags::all_modes() {
            let a = simulate_pipelined(&w, &cfg, f).unwrap();
            let e = event_driven_oracle(&w, &cfg, f).unwrap();
            if shares_chunk(&w) {
                // The closed form approximates contention on a reused chunk.
                let rel = (a.total_cycles as f64 - e.total_cycles as f64).abs() / e.total_cycles as f64;
                prop_assert!(rel <= 0.10, "{}: {} vs {}", f, a.total_cycles, e.total_cycles);
            } else {
                prop_assert_eq!(a.total_cycles, e.total_cycles, "{}", f);
            }
        }
    }

    #[test]
    fn more_compute_lanes_never_slower(w in workload()) {
        let cfg = AcceleratorConfig::default();
        let mut wide = cfg.clone();
        wide.psmac_rows *= 2;
        for f in PipelineFlags::all_modes() {
            let a = simulate_pipelined(&w, &cfg, f).unwrap().total_cycles;
            let b = simulate_pipelined(&w, &wide, f).unwrap().total_cycles;
            prop_assert!(b <= a);
        }
    }
}
