use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::refmodel::{gradient_weights, to_pairs, FloatModel, Mat, ModelConfig, Sample, Weights};

/// A loss whose gradient can be taken with respect to one weight block.
pub trait BlockLoss: Sync {
    fn blocks(&self) -> usize;
    /// Current values of `block`.
    fn params(&self, block: usize) -> &[f64];
    /// Gradient with respect to `block` when it is replaced by `w`.
    fn gradient(&self, block: usize, w: &[f64]) -> Result<Vec<f64>>;
}

/// `Σ_b ½ w_bᵀ A_b w_b`, one dense symmetric matrix per block.
#[derive(Clone, Debug)]
pub struct QuadraticLoss {
    pub a: Vec<Vec<Vec<f64>>>,
    pub w: Vec<Vec<f64>>,
}

impl QuadraticLoss {
    pub fn single(a: Vec<Vec<f64>>, w: Vec<f64>) -> Self {
        Self { a: vec![a], w: vec![w] }
    }

    pub fn exact_trace(&self, block: usize) -> f64 {
        (0..self.a[block].len()).map(|i| self.a[block][i][i]).sum()
    }
}

impl BlockLoss for QuadraticLoss {
    fn blocks(&self) -> usize {
        self.a.len()
    }

    fn params(&self, block: usize) -> &[f64] {
        &self.w[block]
    }

    fn gradient(&self, block: usize, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a[block].iter().map(|row| row.iter().zip(w).map(|(a, x)| a * x).sum()).collect())
    }
}

/// Mean cross-entropy of the float ViT over a fixed batch; blocks are the
/// weight matrices in layer order (biases excluded).
pub struct VitLoss {
    cfg: ModelConfig,
    weights: Weights,
    batch: Vec<(Mat, usize)>,
}

impl VitLoss {
    pub fn new(model: &FloatModel, batch: &[Sample]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("curvature batch is empty".into()));
        }
        Ok(Self { cfg: model.config.clone(), weights: model.weights()?, batch: to_pairs(batch) })
    }
}

impl BlockLoss for VitLoss {
    fn blocks(&self) -> usize {
        self.weights.linears().len()
    }

    fn params(&self, block: usize) -> &[f64] {
        &self.weights.linears()[block].w.data
    }

    fn gradient(&self, block: usize, w: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.weights.clone();
        ws.linears_mut()[block].w.data.copy_from_slice(w);
        Ok(gradient_weights(&self.cfg, &ws, &self.batch).linears()[block].w.data.clone())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `Hz` by central difference of gradients, `ε = 1e-3·‖W‖∞/‖z‖∞`.
pub fn hessian_matvec(loss: &dyn BlockLoss, block: usize, z: &[f64]) -> Result<Vec<f64>> {
    if block >= loss.blocks() {
        return Err(Error::InvalidArgument(format!("block {block} of {}", loss.blocks())));
    }
    let w = loss.params(block);
    if z.len() != w.len() {
        return Err(Error::Shape(format!("probe of {} for {} weights", z.len(), w.len())));
    }
    let zn = max_abs(z);
    if zn == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let wn = max_abs(w);
    // An all-zero block still needs a usable step.
    let eps = 1e-3 * if wn > 0.0 { wn } else { 1.0 } / zn;
    let shifted = |sign: f64| -> Vec<f64> { w.iter().zip(z).map(|(a, b)| a + sign * eps * b).collect() };
    let gp = loss.gradient(block, &shifted(1.0))?;
    let gm = loss.gradient(block, &shifted(-1.0))?;
    let hz: Vec<f64> = gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    if hz.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Hessian-vector product of block {block}")));
    }
    Ok(hz)
}

/// Probe distribution for trace estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    #[default]
    Rademacher,
    Gaussian,
}

/// `(1/m) Σ zᵢᵀ H zᵢ` over `m` random probes.
pub fn hutchinson_trace(loss: &dyn BlockLoss, block: usize, m: usize, rng: &mut Rng, probe: Probe) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("trace estimation needs at least one probe".into()));
    }
    let n = loss.params(block).len();
    let mut total = 0.0;
    for _ in 0..m {
        let z: Vec<f64> = (0..n)
            .map(|_| match probe {
                Probe::Rademacher => rng.rademacher(),
                Probe::Gaussian => rng.normal(),
            })
            .collect();
        let hz = hessian_matvec(loss, block, &z)?;
        total += z.iter().zip(&hz).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total / m as f64)
}

/// Per-layer Hessian traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub traces: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub probe: Probe,
}

/// Hutchinson estimates for every block; block `b` draws from stream `b`.
pub fn estimate_traces(loss: &dyn BlockLoss, m: usize, seed: u64, probe: Probe) -> Result<TraceEstimate> {
    let root = Rng::new(seed);
    let traces = (0..loss.blocks())
        .map(|b| hutchinson_trace(loss, b, m, &mut root.split(b as u64), probe))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceEstimate { traces, samples: m, seed, probe })
}

/// Trace of the full finite-difference Hessian, one basis vector at a time.
pub fn finite_difference_trace(loss: &dyn BlockLoss, block: usize) -> Result<f64> {
    let n = loss.params(block).len();
    let mut e = vec![0.0; n];
    let mut tr = 0.0;
    for i in 0..n {
        e[i] = 1.0;
        tr += hessian_matvec(loss, block, &e)?[i];
        e[i] = 0.0;
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag123() -> QuadraticLoss {
        QuadraticLoss::single(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]], vec![0.3, -0.2, 0.5])
    }

    #[test]
    fn matvec_on_diagonal_quadratic() {
        let hz = hessian_matvec(&diag123(), 0, &[0.0, 1.0, 0.0]).unwrap();
        for (a, b) in hz.iter().zip([0.0, 2.0, 0.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(hessian_matvec(&diag123(), 0, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(hessian_matvec(&diag123(), 0, &[1.0]).is_err());
    }

    #[test]
    fn rademacher_on_diagonal_is_exact() {
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let t = hutchinson_trace(&diag123(), 0, 1, &mut rng, Probe::Rademacher).unwrap();
            assert!((t - 6.0).abs() < 1e-9);
        }
    }

    /// Dense SPD `A = BBᵀ/k` with `B` of shape `(n, k)`, `k = 4n`.
    fn dense(n: usize, seed: u64) -> QuadraticLoss {
        let mut rng = Rng::new(seed);
        let k = 4 * n;
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.normal()).collect()).collect();
        let a = (0..n).map(|i| (0..n).map(|j| (0..k).map(|t| b[i][t] * b[j][t]).sum::<f64>() / k as f64).collect()).collect();
        QuadraticLoss::single(a, (0..n).map(|_| rng.normal()).collect())
    }

    #[test]
    fn dense_estimate_close_to_exact() {
        let q = dense(8, 3);
        let t = hutchinson_trace(&q, 0, 256, &mut Rng::new(4), Probe::Rademacher).unwrap();
        let exact = q.exact_trace(0);
        assert!((t - exact).abs() / exact < 0.05, "{t} vs {exact}");
        assert!((finite_difference_trace(&q, 0).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn unbiased_over_seeds() {
        let q = dense(8, 5);
        let mean: f64 =
            (0..64).map(|s| hutchinson_trace(&q, 0, 64, &mut Rng::new(100 + s), Probe::Rademacher).unwrap()).sum::<f64>() / 64.0;
        assert!((mean - q.exact_trace(0)).abs() / q.exact_trace(0) < 0.02);
    }
}
