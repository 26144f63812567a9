use std::collections::BTreeMap;

use super::config::ModelConfig;
use super::mat::Mat;
use super::model::{FloatModel, Norm, Weights};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Float-model LayerNorm epsilon.
pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU. Shared by every engine so they agree exactly.
pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_tanh_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Normalise one row in place; returns `(xhat, rstd)`.
pub fn layer_norm_row(x: &[f64], norm: &Norm, out: &mut [f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
    for (i, o) in out.iter_mut().enumerate() {
        *o = xhat[i] * norm.g[i] + norm.b[i];
    }
    (xhat, rstd)
}

pub(crate) struct LnCache {
    pub xhat: Mat,
    pub rstd: Vec<f64>,
}

fn layer_norm(x: &Mat, norm: &Norm) -> (Mat, LnCache) {
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let (xh, rs) = layer_norm_row(x.row(r), norm, y.row_mut(r));
        xhat.row_mut(r).copy_from_slice(&xh);
        rstd.push(rs);
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn softmax_rows(s: &mut Mat) {
    for r in 0..s.rows {
        let row = s.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub h1: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Attention probabilities per head, each `(N, N)`.
    pub p: Vec<Mat>,
    pub a: Mat,
    pub ln2: LnCache,
    pub h2: Mat,
    pub u: Mat,
    pub g: Mat,
}

/// Everything the backward pass needs for one sample.
pub struct ForwardCache {
    pub(crate) x: Mat,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) lnf_xhat: Vec<f64>,
    pub(crate) lnf_rstd: f64,
    pub(crate) f: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Names of the activation points recorded in an [`ActivationTrace`].
pub mod points {
    pub const INPUT: &str = "input";
    pub const LNF_OUT: &str = "lnf_out";
    pub const LOGITS: &str = "logits";

    /// Residual stream: `0` after the embedding, `2l+1` after block `l`'s
    /// attention, `2l+2` after its MLP. Each is the input of a LayerNorm.
    pub fn res(k: usize) -> String {
        format!("res.{k}")
    }
    pub fn ln1_out(l: usize) -> String {
        format!("blocks.{l}.ln1_out")
    }
    pub fn ln2_out(l: usize) -> String {
        format!("blocks.{l}.ln2_out")
    }
    pub fn q_out(l: usize) -> String {
        format!("blocks.{l}.attn.q_out")
    }
    pub fn k_out(l: usize) -> String {
        format!("blocks.{l}.attn.k_out")
    }
    pub fn v_out(l: usize) -> String {
        format!("blocks.{l}.attn.v_out")
    }
    pub fn attn_map(l: usize) -> String {
        format!("blocks.{l}.attn.map")
    }
    pub fn attn_out(l: usize) -> String {
        format!("blocks.{l}.attn.av_out")
    }
    pub fn fc1_out(l: usize) -> String {
        format!("blocks.{l}.mlp.fc1_out")
    }
    pub fn gelu_out(l: usize) -> String {
        format!("blocks.{l}.mlp.gelu_out")
    }
}

/// Float activations per layer point, rows of all recorded samples stacked.
#[derive(Clone, Debug, Default)]
pub struct ActivationTrace {
    pub points: BTreeMap<String, Mat>,
}

impl ActivationTrace {
    fn push(&mut self, name: String, m: &Mat) {
        match self.points.get_mut(&name) {
            Some(acc) => {
                assert_eq!(acc.cols, m.cols, "trace width for {name}");
                acc.data.extend_from_slice(&m.data);
                acc.rows += m.rows;
            }
            None => {
                self.points.insert(name, m.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.points.get(name).ok_or_else(|| Error::MissingSpec(name.to_string()))
    }

    /// Same data as `f32` tensors.
    pub fn to_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.points
            .iter()
            .map(|(k, m)| Ok((k.clone(), Tensor::from_f64(vec![m.rows, m.cols], &m.data)?)))
            .collect()
    }

    pub fn extend(&mut self, other: &ActivationTrace) {
        for (k, m) in &other.points {
            self.push(k.clone(), m);
        }
    }
}

pub(crate) fn check_input(cfg: &ModelConfig, x: &Tensor) -> Result<Mat> {
    let (n, d) = x.dims2()?;
    if n != cfg.tokens || d != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input ({n}, {d}) but model expects ({}, {})",
            cfg.tokens, cfg.input_dim
        )));
    }
    Ok(Mat::from_vec(n, d, x.to_f64()))
}

/// Forward pass on the `f64` working weights, optionally recording a trace.
pub fn forward_weights(
    cfg: &ModelConfig,
    w: &Weights,
    x: &Mat,
    mut trace: Option<&mut ActivationTrace>,
) -> ForwardCache {
    let (n, hd) = (cfg.tokens, cfg.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut rec = |name: String, m: &Mat| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(name, m);
        }
    };
    rec(points::INPUT.into(), x);

    let mut e = w.embed.apply(x);
    e.add_assign(&w.pos);
    rec(points::res(0), &e);

    let mut blocks = Vec::with_capacity(cfg.layers);
    for (l, b) in w.blocks.iter().enumerate() {
        let e_in = e.clone();
        let (h1, ln1) = layer_norm(&e_in, &b.ln1);
        rec(points::ln1_out(l), &h1);
        let q = b.q.apply(&h1);
        let k = b.k.apply(&h1);
        let v = b.v.apply(&h1);
        rec(points::q_out(l), &q);
        rec(points::k_out(l), &k);
        rec(points::v_out(l), &v);

        let mut a = Mat::zeros(n, cfg.dim);
        let mut p = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = q.col_slice(h * hd, hd);
            let kh = k.col_slice(h * hd, hd);
            let vh = v.col_slice(h * hd, hd);
            let mut s = qh.matmul_t(&kh);
            s.data.iter_mut().for_each(|x| *x *= scale);
            softmax_rows(&mut s);
            rec(points::attn_map(l), &s);
            a.set_col_slice(h * hd, &s.matmul(&vh));
            p.push(s);
        }
        rec(points::attn_out(l), &a);

        let mut e_mid = e_in.clone();
        e_mid.add_assign(&b.o.apply(&a));
        rec(points::res(2 * l + 1), &e_mid);

        let (h2, ln2) = layer_norm(&e_mid, &b.ln2);
        rec(points::ln2_out(l), &h2);
        let u = b.fc1.apply(&h2);
        rec(points::fc1_out(l), &u);
        let g = Mat::from_vec(u.rows, u.cols, u.data.iter().map(|&x| gelu_tanh(x)).collect());
        rec(points::gelu_out(l), &g);
        e = e_mid.clone();
        e.add_assign(&b.fc2.apply(&g));
        rec(points::res(2 * l + 2), &e);

        blocks.push(BlockCache { ln1, h1, q, k, v, p, a, ln2, h2, u, g });
    }

    let mut f = vec![0.0; cfg.dim];
    let (lnf_xhat, lnf_rstd) = layer_norm_row(e.row(0), &w.lnf, &mut f);
    let fm = Mat::from_vec(1, cfg.dim, f.clone());
    rec(points::LNF_OUT.into(), &fm);
    let logits = w.head.apply(&fm).data;
    rec(points::LOGITS.into(), &Mat::from_vec(1, cfg.classes, logits.clone()));

    ForwardCache { x: x.clone(), blocks, lnf_xhat, lnf_rstd, f, logits }
}

/// Logits and the activation trace of one sample.
pub fn forward(model: &FloatModel, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
    let w = model.weights()?;
    let xm = check_input(&model.config, x)?;
    let mut trace = ActivationTrace::default();
    let cache = forward_weights(&model.config, &w, &xm, Some(&mut trace));
    Ok((Tensor::from_f64(vec![model.config.classes], &cache.logits)?, trace))
}

/// Cross-entropy of one logit vector.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    (z.ln() + m) - logits[label]
}

/// Mean cross-entropy over a batch.
pub fn loss(cfg: &ModelConfig, w: &Weights, batch: &[(Mat, usize)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| cross_entropy(&forward_weights(cfg, w, x, None).logits, *y))
        .sum::<f64>()
        / batch.len() as f64
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(cfg: &ModelConfig, w: &Weights, batch: &[(Mat, usize)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let hits = batch
        .iter()
        .filter(|(x, y)| argmax(&forward_weights(cfg, w, x, None).logits) == *y)
        .count();
    hits as f64 / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_input(cfg: &ModelConfig, seed: u64) -> Mat {
        let mut rng = Rng::new(seed);
        Mat::from_vec(
            cfg.tokens,
            cfg.input_dim,
            (0..cfg.tokens * cfg.input_dim).map(|_| rng.normal()).collect(),
        )
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let cfg = ModelConfig::default();
        let w = Weights::zeros(&cfg);
        let c = forward_weights(&cfg, &w, &random_input(&cfg, 1), None);
        assert!(c.logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn single_token_attention_is_one() {
        let cfg = ModelConfig { tokens: 2, heads: 1, layers: 1, ..Default::default() };
        let w = Weights::init(&cfg, &mut Rng::new(2));
        let x = random_input(&cfg, 3);
        let mut s = Mat::from_vec(1, 1, vec![3.7]);
        softmax_rows(&mut s);
        assert_eq!(s.data, vec![1.0]);
        let mut t = ActivationTrace::default();
        forward_weights(&cfg, &w, &x, Some(&mut t));
        // N=2 map rows still sum to one.
        let m = t.get(&points::attn_map(0)).unwrap();
        for r in 0..m.rows {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_straight_line_reimplementation() {
        let cfg = ModelConfig { layers: 1, heads: 2, dim: 8, tokens: 4, input_dim: 3, classes: 3, mlp_ratio: 2.0 };
        let w = Weights::init(&cfg, &mut Rng::new(9));
        let x = random_input(&cfg, 10);
        let got = forward_weights(&cfg, &w, &x, None).logits;
        let want = straight_line(&cfg, &w, &x);
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() <= 1e-5 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    /// Independent element-wise re-implementation for a one-block model.
    fn straight_line(cfg: &ModelConfig, w: &Weights, x: &Mat) -> Vec<f64> {
        let (n, d, hd) = (cfg.tokens, cfg.dim, cfg.head_dim());
        let lin = |x: &Vec<Vec<f64>>, l: &super::super::model::Linear| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..l.w.cols)
                        .map(|j| l.b[j] + (0..row.len()).map(|i| row[i] * l.w.at(i, j)).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let ln = |x: &Vec<Vec<f64>>, nrm: &Norm| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    let mu = row.iter().sum::<f64>() / row.len() as f64;
                    let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / row.len() as f64;
                    row.iter()
                        .enumerate()
                        .map(|(i, v)| (v - mu) / (var + LN_EPS).sqrt() * nrm.g[i] + nrm.b[i])
                        .collect()
                })
                .collect()
        };
        let xs: Vec<Vec<f64>> = (0..n).map(|r| x.row(r).to_vec()).collect();
        let mut e = lin(&xs, &w.embed);
        for r in 0..n {
            for c in 0..d {
                e[r][c] += w.pos.at(r, c);
            }
        }
        let b = &w.blocks[0];
        let h = ln(&e, &b.ln1);
        let (q, k, v) = (lin(&h, &b.q), lin(&h, &b.k), lin(&h, &b.v));
        let mut a = vec![vec![0.0; d]; n];
        for head in 0..cfg.heads {
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| (0..hd).map(|t| q[i][head * hd + t] * k[j][head * hd + t]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                for j in 0..n {
                    let pij = (s[j] - m).exp() / z;
                    for t in 0..hd {
                        a[i][head * hd + t] += pij * v[j][head * hd + t];
                    }
                }
            }
        }
        let o = lin(&a, &b.o);
        let e1: Vec<Vec<f64>> = e.iter().zip(&o).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect();
        let h2 = ln(&e1, &b.ln2);
        let u = lin(&h2, &b.fc1);
        let g: Vec<Vec<f64>> = u.iter().map(|r| r.iter().map(|&x| gelu_tanh(x)).collect()).collect();
        let m = lin(&g, &b.fc2);
        let e2: Vec<Vec<f64>> = e1.iter().zip(&m).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect();
        let f = ln(&vec![e2[0].clone()], &w.lnf);
        lin(&f, &w.head)[0].clone()
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut rng = Rng::new(4);
        let x: Vec<f64> = (0..64).map(|_| 3.0 + 5.0 * rng.normal()).collect();
        let mut out = vec![0.0; 64];
        layer_norm_row(&x, &Norm::identity(64), &mut out);
        let mean = out.iter().sum::<f64>() / 64.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() <= 1e-5);
        assert!((var - 1.0).abs() <= 1e-4);
    }
}
