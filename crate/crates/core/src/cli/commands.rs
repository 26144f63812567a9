use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::artifact;
use super::config::{Resolved, WorkloadKind};
use crate::accelsim::{
    energy, simulate_pipelined, CostReport, ModeComparison, PipelineFlags, SimReport, VitDims, Workload,
};
use crate::error::{Error, Result};
use crate::intengine::{int_accuracy, int_forward, QuantizedModel};
use crate::mpsearch::{
    estimate_traces, evo_search, layer_params, model_size_mb, pareto_allocate, BitConfig, EvalCache, LayerCosts,
    SearchConfig, TraceEstimate, VitLoss,
};
use crate::quantizer::{calibrate, CodeTrace, FakeQuantModel, QParams};
use crate::refmodel::{accuracy, load_checkpoint, save_checkpoint, to_pairs, train, FloatModel, Sample, SyntheticDataset};

const CHECKPOINT: &str = "checkpoint";
const QMODEL: &str = "qmodel";
const QPARAMS: &str = "qparams.json";
const BITCONFIG: &str = "bitconfig.json";

/// Evaluation engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Float,
    Fakequant,
    Int,
}

impl Engine {
    fn name(self) -> &'static str {
        match self {
            Engine::Float => "float",
            Engine::Fakequant => "fakequant",
            Engine::Int => "int",
        }
    }
}

/// Resolved config, its hash and the output directory.
pub struct Ctx {
    pub cfg: Resolved,
    pub hash: String,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(cfg: Resolved, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out)?;
        Ok(Self { hash: cfg.hash()?, cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data(&self) -> Result<SyntheticDataset> {
        SyntheticDataset::generate(&self.cfg.dataset)
    }

    fn val(&self, d: &SyntheticDataset) -> Result<Vec<Sample>> {
        d.resample(self.cfg.eval.val_samples, 0)
    }

    fn calib(&self, d: &SyntheticDataset) -> Result<Vec<Sample>> {
        d.resample(self.cfg.quant.calib_samples, 1)
    }

    fn model(&self) -> Result<FloatModel> {
        let dir = self.path(CHECKPOINT);
        artifact::check_dir(&dir, "checkpoint", &self.hash)?;
        load_checkpoint(&dir)
    }

    fn qparams(&self) -> Result<QParams> {
        let qp: QParams = artifact::read(&self.path(QPARAMS), "qparams", &self.hash)?;
        qp.validate()?;
        Ok(qp)
    }

    /// The searched bit-widths, or all-8 before any search.
    fn bits(&self) -> Result<BitConfig> {
        let p = self.path(BITCONFIG);
        if p.exists() {
            artifact::read(&p, "bitconfig", &self.hash)
        } else {
            BitConfig::uniform(&self.cfg.model, 8)
        }
    }

    fn write_qmodel(&self, qm: &QuantizedModel) -> Result<()> {
        let dir = self.path(QMODEL);
        fs::create_dir_all(&dir)?;
        qm.save(&dir)?;
        artifact::mark_dir(&dir, "qmodel", &self.hash)
    }

    fn summary(&self, command: &str, fields: Value) -> Value {
        let mut v = json!({"command": command, "status": "ok", "config_hash": self.hash});
        if let (Some(o), Value::Object(f)) = (v.as_object_mut(), fields) {
            o.extend(f);
        }
        v
    }
}

pub fn train_cmd(ctx: &Ctx) -> Result<Value> {
    let data = ctx.data()?;
    let val = ctx.val(&data)?;
    let (model, report) = train(&ctx.cfg.model, &data.samples, &val, &ctx.cfg.train)?;
    let dir = ctx.path(CHECKPOINT);
    fs::create_dir_all(&dir)?;
    save_checkpoint(&model, &dir)?;
    artifact::mark_dir(&dir, "checkpoint", &ctx.hash)?;
    artifact::write(&ctx.path("train.json"), "train", &ctx.hash, &report)?;
    Ok(ctx.summary(
        "train",
        json!({"train_accuracy": report.train_accuracy, "val_accuracy": report.val_accuracy, "artifact": dir}),
    ))
}

pub fn calibrate_cmd(ctx: &Ctx) -> Result<Value> {
    let model = ctx.model()?;
    let calib = ctx.calib(&ctx.data()?)?;
    let qp = calibrate(&model, &calib, &ctx.cfg.quant)?;
    artifact::write(&ctx.path(QPARAMS), "qparams", &ctx.hash, &qp)?;
    Ok(ctx.summary("calibrate", json!({"points": qp.points.len(), "artifact": ctx.path(QPARAMS)})))
}

pub fn quantize_cmd(ctx: &Ctx) -> Result<Value> {
    let model = ctx.model()?;
    let qp = ctx.qparams()?;
    let bc = ctx.bits()?;
    let qm = QuantizedModel::build(&model, &qp, &bc)?;
    ctx.write_qmodel(&qm)?;
    Ok(ctx.summary("quantize", json!({"bits": bc.bits, "model_size_mb": bc.model_size_mb, "artifact": ctx.path(QMODEL)})))
}

pub fn search_cmd(ctx: &Ctx, budget_override: Option<f64>) -> Result<Value> {
    let s = &ctx.cfg.search;
    let model = ctx.model()?;
    let qp = ctx.qparams()?;
    let data = ctx.data()?;
    let calib = ctx.calib(&data)?;
    let held_out = data.resample(s.eval_samples, 2)?;
    let fq = FakeQuantModel::new(&model, &qp)?;
    let cfg = &ctx.cfg.model;
    let params = layer_params(cfg);
    let n = params.len();

    let loss = VitLoss::new(&model, &calib[..s.hessian_batch.min(calib.len())])?;
    let traces: TraceEstimate = estimate_traces(&loss, s.hessian_samples, ctx.cfg.seed, s.probe)?;
    artifact::write(&ctx.path("traces.json"), "traces", &ctx.hash, &traces)?;
    let costs = LayerCosts::from_bank(traces.traces.clone(), &fq.bank, params.clone())?;

    let (low, high) = (model_size_mb(&params, &vec![4; n]), model_size_mb(&params, &vec![8; n]));
    let budget = budget_override.or(s.budget_mb).unwrap_or(0.5 * (low + high));
    let mut init: Vec<Vec<u32>> = pareto_allocate(&costs, budget, s.population)?.into_iter().map(|a| a.bits).collect();
    // The smallest configuration always seeds the population, so the result
    // can never score below it.
    let floor = vec![4; n];
    if !init.contains(&floor) {
        if init.len() >= s.population {
            init.pop();
        }
        init.push(floor.clone());
    }

    let cache = EvalCache::new(|b: &[u32]| fq.accuracy(&held_out, b));
    let eval = |b: &[u32]| cache.get(b);
    let hessian_only = eval(&init[0])?;
    let floor_acc = eval(&floor)?;
    let sc = SearchConfig {
        population: s.population,
        offspring: s.offspring,
        mutation_prob: s.mutation_prob,
        iterations: s.iterations,
        seed: ctx.cfg.seed,
        budget_mb: budget,
    };
    let r = evo_search(&init, &params, eval, &sc)?;
    let mut bc = BitConfig::new(cfg, r.bits.clone())?;
    bc.omega = Some(costs.omega(&r.bits)?);
    bc.accuracy = Some(r.accuracy);
    artifact::write(&ctx.path(BITCONFIG), "bitconfig", &ctx.hash, &bc)?;
    fs::write(ctx.path("search_log.csv"), r.log_csv())?;
    if qp.config.integer_compatible() {
        ctx.write_qmodel(&QuantizedModel::from_bank(&model, &qp, &fq.bank, &bc)?)?;
    }
    Ok(ctx.summary(
        "search-bits",
        json!({
            "budget_mb": budget,
            "bits": bc.bits,
            "model_size_mb": bc.model_size_mb,
            "accuracy": r.accuracy,
            "hessian_only_accuracy": hessian_only,
            "all4_accuracy": floor_acc,
            "evaluations": r.evaluations,
            "artifact": ctx.path(BITCONFIG),
        }),
    ))
}

/// Per-point code comparison of the integer engine against fake-quant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub samples: usize,
    pub codes: usize,
    pub mismatched_points: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub engine: Engine,
    pub accuracy: f64,
    pub samples: usize,
    pub bits: Vec<u32>,
    pub check: Option<CheckSummary>,
}

fn load_qmodel(ctx: &Ctx, bc: &BitConfig) -> Result<QuantizedModel> {
    let dir = ctx.path(QMODEL);
    artifact::check_dir(&dir, "qmodel", &ctx.hash)?;
    let qm = QuantizedModel::load(&dir)?;
    if qm.bitconfig.bits != bc.bits {
        return Err(Error::Config("qmodel bit-widths differ from bitconfig.json; rerun quantize".into()));
    }
    Ok(qm)
}

fn check_engines(ctx: &Ctx, fq: &FakeQuantModel, qm: &QuantizedModel, samples: &[Sample]) -> Result<CheckSummary> {
    let bits = &qm.bitconfig.bits;
    let mut codes = 0;
    let mut bad: Vec<(String, usize)> = Vec::new();
    for s in samples.iter().take(ctx.cfg.eval.check_samples) {
        let (mut a, mut b) = (CodeTrace::default(), CodeTrace::default());
        let logits = fq.forward(&s.as_mat(), bits, Some(&mut a))?;
        let out = int_forward(qm, &s.x, Some(&mut b))?;
        for (name, k) in a.mismatches(&b) {
            match bad.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => *c += k,
                None => bad.push((name, k)),
            }
        }
        if logits != out.dequantize() && !bad.iter().any(|(n, _)| n == "logits") {
            bad.push(("logits".into(), 1));
        }
        codes += a.total_codes();
    }
    Ok(CheckSummary { samples: samples.len().min(ctx.cfg.eval.check_samples), codes, mismatched_points: bad })
}

pub fn eval_cmd(ctx: &Ctx, engine: Engine, check: bool) -> Result<Value> {
    let model = ctx.model()?;
    let val = ctx.val(&ctx.data()?)?;
    let bc = ctx.bits()?;
    let needs_quant = check || engine != Engine::Float;
    let qp = if needs_quant { Some(ctx.qparams()?) } else { None };
    let fq = qp.as_ref().map(|qp| FakeQuantModel::new(&model, qp)).transpose()?;
    let qm = if check || engine == Engine::Int { Some(load_qmodel(ctx, &bc)?) } else { None };
    let acc = match engine {
        Engine::Float => accuracy(&model.config, &model.weights()?, &to_pairs(&val)),
        Engine::Fakequant => fq.as_ref().map(|f| f.accuracy(&val, &bc.bits)).transpose()?.unwrap_or_default(),
        Engine::Int => qm.as_ref().map(|q| int_accuracy(q, &val)).transpose()?.unwrap_or_default(),
    };
    let check = match (check, &fq, &qm) {
        (true, Some(f), Some(q)) => Some(check_engines(ctx, f, q, &val)?),
        _ => None,
    };
    let summary = EvalSummary { engine, accuracy: acc, samples: val.len(), bits: bc.bits.clone(), check: check.clone() };
    artifact::write(&ctx.path(&format!("eval_{}.json", engine.name())), "eval", &ctx.hash, &summary)?;
    if let Some(c) = &check {
        if !c.mismatched_points.is_empty() {
            return Err(Error::OracleMismatch(format!(
                "integer engine differs from fake-quant at {} point(s): {:?}",
                c.mismatched_points.len(),
                c.mismatched_points
            )));
        }
    }
    let mut fields = json!({"engine": engine.name(), "accuracy": acc, "samples": val.len()});
    if let Some(c) = check {
        fields["check"] = json!({"samples": c.samples, "codes": c.codes, "mismatches": 0});
    }
    Ok(ctx.summary("eval", fields))
}

fn mode_file(flags: PipelineFlags) -> String {
    format!("simulate_{}", flags.to_string().replace(',', "_"))
}

fn stage_csv(r: &CostReport) -> String {
    let mut s = String::from("stage,kind,group,rows,row_cycles,busy_cycles,products\n");
    for st in &r.stages {
        s.push_str(&format!(
            "{},{:?},{:?},{},{},{},{}\n",
            st.name, st.kind, st.group, st.rows, st.row_cycles, st.busy_cycles, st.products
        ));
    }
    s
}

fn workload(ctx: &Ctx) -> Result<Workload> {
    match ctx.cfg.simulate.workload {
        WorkloadKind::Model => Workload::from_model(&ctx.cfg.model, &ctx.bits()?.bits),
        WorkloadKind::DeitTiny => {
            let d = VitDims::deit_tiny();
            Workload::vit(&d, &vec![8; d.weight_layers()])
        }
    }
}

pub fn simulate_cmd(ctx: &Ctx, pipeline: Option<PipelineFlags>) -> Result<Value> {
    let w = workload(ctx)?;
    let arch = &ctx.cfg.arch;
    let modes: Vec<PipelineFlags> = match pipeline {
        Some(f) => vec![f],
        None => PipelineFlags::all_modes().to_vec(),
    };
    artifact::write(&ctx.path("arch.json"), "arch", &ctx.hash, arch)?;
    let mut rows = Vec::new();
    for f in modes {
        let r = energy(&w, arch, &simulate_pipelined(&w, arch, f)?)?;
        let base = mode_file(f);
        artifact::write(&ctx.path(&format!("{base}.json")), "simulate", &ctx.hash, &r)?;
        fs::write(ctx.path(&format!("{base}.csv")), stage_csv(&r))?;
        rows.push(json!({
            "pipeline": f.to_string(),
            "total_cycles": r.total_cycles,
            "latency_us": r.latency_us,
            "energy_pj": r.energy.as_ref().map(|e| e.total),
        }));
    }
    Ok(ctx.summary("simulate", json!({"modes": rows})))
}

/// Accuracy by engine and timing by pipeline mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub float_accuracy: Option<f64>,
    pub fakequant_accuracy: Option<f64>,
    pub int_accuracy: Option<f64>,
    pub oracle_check_passed: Option<bool>,
    pub bits: Option<Vec<u32>>,
    pub model_size_mb: Option<f64>,
    pub modes: Vec<ModeComparison>,
}

fn optional<T: serde::de::DeserializeOwned>(p: &Path, kind: &str, hash: &str) -> Result<Option<T>> {
    if p.exists() {
        artifact::read(p, kind, hash).map(Some)
    } else {
        Ok(None)
    }
}

pub fn report_cmd(ctx: &Ctx) -> Result<Value> {
    let h = &ctx.hash;
    for dir in [CHECKPOINT, QMODEL] {
        if ctx.path(dir).exists() {
            artifact::check_dir(&ctx.path(dir), dir, h)?;
        }
    }
    for (file, kind) in [("train.json", "train"), (QPARAMS, "qparams"), ("traces.json", "traces"), ("arch.json", "arch")] {
        optional::<Value>(&ctx.path(file), kind, h)?;
    }
    let evals: Vec<Option<EvalSummary>> = [Engine::Float, Engine::Fakequant, Engine::Int]
        .iter()
        .map(|e| optional(&ctx.path(&format!("eval_{}.json", e.name())), "eval", h))
        .collect::<Result<_>>()?;
    let bc: Option<BitConfig> = optional(&ctx.path(BITCONFIG), "bitconfig", h)?;
    let runs: Vec<CostReport> = PipelineFlags::all_modes()
        .into_iter()
        .map(|f| optional(&ctx.path(&format!("{}.json", mode_file(f))), "simulate", h))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let modes = if runs.is_empty() { Vec::new() } else { SimReport::new(runs)?.comparisons };
    let checks: Vec<bool> = evals.iter().flatten().filter_map(|e| e.check.as_ref()).map(|c| c.mismatched_points.is_empty()).collect();
    let acc = |i: usize| evals[i].as_ref().map(|e| e.accuracy);
    let report = Report {
        float_accuracy: acc(0),
        fakequant_accuracy: acc(1),
        int_accuracy: acc(2),
        oracle_check_passed: if checks.is_empty() { None } else { Some(checks.iter().all(|&c| c)) },
        bits: evals.iter().flatten().next().map(|e| e.bits.clone()).or(bc.as_ref().map(|b| b.bits.clone())),
        model_size_mb: bc.as_ref().map(|b| b.model_size_mb),
        modes,
    };
    artifact::write(&ctx.path("report.json"), "report", h, &report)?;
    fs::write(ctx.path("report.csv"), report_csv(&report))?;
    Ok(ctx.summary(
        "report",
        json!({
            "float_accuracy": report.float_accuracy,
            "fakequant_accuracy": report.fakequant_accuracy,
            "int_accuracy": report.int_accuracy,
            "speedup_overall": report.modes.iter().find(|m| m.pipeline == PipelineFlags::ALL).map(|m| m.speedup_overall),
            "artifact": ctx.path("report.json"),
        }),
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn report_csv(r: &Report) -> String {
    let mut s = String::from("section,name,value\n");
    for (name, v) in [("float", r.float_accuracy), ("fakequant", r.fakequant_accuracy), ("int", r.int_accuracy)] {
        s.push_str(&format!("accuracy,{name},{}\n", opt(v)));
    }
    for m in &r.modes {
        let p = m.pipeline.to_string().replace(',', "+");
        s.push_str(&format!("cycles,{p},{}\n", m.total_cycles));
        s.push_str(&format!("speedup,{p},{:.4}\n", m.speedup_overall));
        s.push_str(&format!("energy_pj,{p},{}\n", opt(m.energy_pj)));
    }
    s
}

