use rayon::prelude::*;

use super::config::ModelConfig;
use super::dataset::Sample;
use super::forward::{check_input, cross_entropy, forward_weights, gelu_tanh_grad, ForwardCache, LnCache};
use super::mat::Mat;
use super::model::{FloatModel, Linear, Norm, Weights};
use crate::error::{Error, Result};

fn ln_backward(dy: &Mat, cache: &LnCache, norm: &Norm, dnorm: &mut Norm) -> Mat {
    let width = dy.cols as f64;
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    for r in 0..dy.rows {
        let (dyr, xh) = (dy.row(r), cache.xhat.row(r));
        let mut dxhat = vec![0.0; dy.cols];
        for i in 0..dy.cols {
            dnorm.g[i] += dyr[i] * xh[i];
            dnorm.b[i] += dyr[i];
            dxhat[i] = dyr[i] * norm.g[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / width;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / width;
        let rstd = cache.rstd[r];
        for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = rstd * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy`; returns `dy·Wᵀ`.
fn linear_backward(x: &Mat, dy: &Mat, lin: &Linear, dlin: &mut Linear) -> Mat {
    dlin.w.add_assign(&x.t_matmul(dy));
    for (b, s) in dlin.b.iter_mut().zip(dy.col_sums()) {
        *b += s;
    }
    dy.matmul_t(&lin.w)
}

/// Gradient of one sample's cross-entropy, scaled by `weight`.
fn backward_sample(cfg: &ModelConfig, w: &Weights, c: &ForwardCache, label: usize, weight: f64) -> Weights {
    let (n, hd) = (cfg.tokens, cfg.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut g = Weights::zeros(cfg);

    // Softmax cross-entropy.
    let m = c.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = c.logits.iter().map(|l| (l - m).exp()).sum();
    let mut dlogits: Vec<f64> = c.logits.iter().map(|l| weight * (l - m).exp() / z).collect();
    dlogits[label] -= weight;
    let dl = Mat::from_vec(1, cfg.classes, dlogits);
    let f = Mat::from_vec(1, cfg.dim, c.f.clone());
    let df = linear_backward(&f, &dl, &w.head, &mut g.head);
    let lnf_cache = LnCache { xhat: Mat::from_vec(1, cfg.dim, c.lnf_xhat.clone()), rstd: vec![c.lnf_rstd] };
    let dtok = ln_backward(&df, &lnf_cache, &w.lnf, &mut g.lnf);

    let mut de = Mat::zeros(n, cfg.dim);
    de.row_mut(0).copy_from_slice(dtok.row(0));

    for (l, b) in w.blocks.iter().enumerate().rev() {
        let bc = &c.blocks[l];
        let gb = &mut g.blocks[l];

        // MLP branch.
        let dgelu = linear_backward(&bc.g, &de, &b.fc2, &mut gb.fc2);
        let mut du = dgelu;
        for (d, &u) in du.data.iter_mut().zip(&bc.u.data) {
            *d *= gelu_tanh_grad(u);
        }
        let dh2 = linear_backward(&bc.h2, &du, &b.fc1, &mut gb.fc1);
        let mut de_mid = de;
        de_mid.add_assign(&ln_backward(&dh2, &bc.ln2, &b.ln2, &mut gb.ln2));

        // Attention branch.
        let da = linear_backward(&bc.a, &de_mid, &b.o, &mut gb.o);
        let mut dq = Mat::zeros(n, cfg.dim);
        let mut dk = Mat::zeros(n, cfg.dim);
        let mut dv = Mat::zeros(n, cfg.dim);
        for h in 0..cfg.heads {
            let p = &bc.p[h];
            let dah = da.col_slice(h * hd, hd);
            let vh = bc.v.col_slice(h * hd, hd);
            let qh = bc.q.col_slice(h * hd, hd);
            let kh = bc.k.col_slice(h * hd, hd);
            let dp = dah.matmul_t(&vh);
            dv.set_col_slice(h * hd, &p.t_matmul(&dah));
            let mut ds = Mat::zeros(n, n);
            for r in 0..n {
                let dot: f64 = p.row(r).iter().zip(dp.row(r)).map(|(a, b)| a * b).sum();
                for (j, o) in ds.row_mut(r).iter_mut().enumerate() {
                    *o = p.at(r, j) * (dp.at(r, j) - dot) * scale;
                }
            }
            dq.set_col_slice(h * hd, &ds.matmul(&kh));
            dk.set_col_slice(h * hd, &ds.t_matmul(&qh));
        }
        let mut dh1 = linear_backward(&bc.h1, &dq, &b.q, &mut gb.q);
        dh1.add_assign(&linear_backward(&bc.h1, &dk, &b.k, &mut gb.k));
        dh1.add_assign(&linear_backward(&bc.h1, &dv, &b.v, &mut gb.v));
        de = de_mid;
        de.add_assign(&ln_backward(&dh1, &bc.ln1, &b.ln1, &mut gb.ln1));
    }

    g.pos.add_assign(&de);
    linear_backward(&c.x, &de, &w.embed, &mut g.embed);
    g
}

/// Mean cross-entropy and its gradient over a batch of `(input, label)`.
///
/// Per-sample gradients run in parallel; the reduction is sequential in
/// batch order so results are bit-reproducible.
pub fn loss_and_gradient(cfg: &ModelConfig, w: &Weights, batch: &[(Mat, usize)]) -> (f64, Weights) {
    assert!(!batch.is_empty(), "empty batch");
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Weights)> = batch
        .par_iter()
        .map(|(x, y)| {
            let c = forward_weights(cfg, w, x, None);
            (cross_entropy(&c.logits, *y), backward_sample(cfg, w, &c, *y, weight))
        })
        .collect();
    let mut total = Weights::zeros(cfg);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l * weight;
        total.axpy(1.0, g);
    }
    (loss, total)
}

/// Gradient on raw working weights.
pub fn gradient_weights(cfg: &ModelConfig, w: &Weights, batch: &[(Mat, usize)]) -> Weights {
    loss_and_gradient(cfg, w, batch).1
}

/// Reverse-mode gradient of the mean cross-entropy for every parameter.
pub fn gradient(model: &FloatModel, batch: &[Sample]) -> Result<Weights> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient of an empty batch".into()));
    }
    let w = model.weights()?;
    let pairs = batch
        .iter()
        .map(|s| Ok((check_input(&model.config, &s.x)?, s.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(gradient_weights(&model.config, &w, &pairs))
}
