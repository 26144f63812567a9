use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::bitconfig::{model_size_mb, BIT_CHOICES};
use crate::error::{Error, Result};
use crate::quantizer::WeightBank;

/// Per-layer ingredients of the second-order perturbation metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCosts {
    pub traces: Vec<f64>,
    /// `‖W_q − W‖₂` per layer and bit-width.
    pub perturbation: Vec<BTreeMap<u32, f64>>,
    pub params: Vec<usize>,
}

impl LayerCosts {
    pub fn new(traces: Vec<f64>, perturbation: Vec<BTreeMap<u32, f64>>, params: Vec<usize>) -> Result<Self> {
        if traces.len() != perturbation.len() || traces.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} traces, {} perturbation rows, {} parameter counts",
                traces.len(),
                perturbation.len(),
                params.len()
            )));
        }
        for (i, p) in perturbation.iter().enumerate() {
            if BIT_CHOICES.iter().any(|b| !p.contains_key(b)) {
                return Err(Error::MissingSpec(format!("perturbation of layer {i} at 4 and 8 bits")));
            }
        }
        Ok(Self { traces, perturbation, params })
    }

    /// Perturbations read from a weight bank calibrated at both widths.
    pub fn from_bank(traces: Vec<f64>, bank: &WeightBank, params: Vec<usize>) -> Result<Self> {
        let perturbation = (0..bank.layers.len())
            .map(|i| BIT_CHOICES.iter().map(|&b| Ok((b, bank.perturbation(i, b)?))).collect::<Result<BTreeMap<_, _>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(traces, perturbation, params)
    }

    pub fn layers(&self) -> usize {
        self.traces.len()
    }

    /// Contribution of layer `i` at `bits`. Negative curvature estimates
    /// contribute nothing.
    fn term(&self, i: usize, bits: u32) -> Result<f64> {
        let p = self.perturbation[i].get(&bits).ok_or_else(|| Error::MissingSpec(format!("layer {i} at {bits} bits")))?;
        Ok(self.traces[i].max(0.0) * p)
    }

    /// `Ω = Σ Tr(H_i)·‖ΔW_i‖₂` at the assigned widths.
    pub fn omega(&self, bits: &[u32]) -> Result<f64> {
        if bits.len() != self.layers() {
            return Err(Error::Shape(format!("{} bit entries for {} layers", bits.len(), self.layers())));
        }
        bits.iter().enumerate().map(|(i, &b)| self.term(i, b)).sum()
    }

    pub fn size_mb(&self, bits: &[u32]) -> f64 {
        model_size_mb(&self.params, bits)
    }
}

/// A bit assignment with its metric and size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub bits: Vec<u32>,
    pub omega: f64,
    pub size_mb: f64,
}

/// Ω, then size, then the bit vector.
fn rank(a: &Allocation, b: &Allocation) -> Ordering {
    a.omega.total_cmp(&b.omega).then(a.size_mb.total_cmp(&b.size_mb)).then_with(|| a.bits.cmp(&b.bits))
}

struct Ranked(Allocation);

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        rank(&self.0, &o.0) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    fn cmp(&self, o: &Self) -> Ordering {
        rank(&self.0, &o.0)
    }
}

/// Layer counts up to this are enumerated exhaustively.
pub const EXACT_LAYER_LIMIT: usize = 20;

const BUDGET_SLACK: f64 = 1e-12;

pub(crate) fn within_budget(size_mb: f64, budget_mb: f64) -> bool {
    size_mb <= budget_mb + BUDGET_SLACK
}

/// The `k` lowest-Ω assignments that fit `budget_mb`, best first.
pub fn pareto_allocate(costs: &LayerCosts, budget_mb: f64, k: usize) -> Result<Vec<Allocation>> {
    let n = costs.layers();
    let floor = costs.size_mb(&vec![4; n]);
    if !within_budget(floor, budget_mb) {
        return Err(Error::Infeasible(format!("budget {budget_mb} MB is below the all-4-bit size {floor} MB")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut out = if n <= EXACT_LAYER_LIMIT { enumerate(costs, budget_mb, k)? } else { greedy(costs, budget_mb, k)? };
    out.sort_by(rank);
    Ok(out)
}

fn allocation(costs: &LayerCosts, bits: Vec<u32>) -> Result<Allocation> {
    Ok(Allocation { omega: costs.omega(&bits)?, size_mb: costs.size_mb(&bits), bits })
}

fn enumerate(costs: &LayerCosts, budget_mb: f64, k: usize) -> Result<Vec<Allocation>> {
    let n = costs.layers();
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for mask in 0u64..(1u64 << n) {
        let bits: Vec<u32> = (0..n).map(|i| if mask >> i & 1 == 1 { 8 } else { 4 }).collect();
        let size = costs.size_mb(&bits);
        if !within_budget(size, budget_mb) {
            continue;
        }
        let a = Allocation { omega: costs.omega(&bits)?, size_mb: size, bits };
        if heap.len() < k {
            heap.push(Ranked(a));
        } else if heap.peek().is_some_and(|w| rank(&a, &w.0) == Ordering::Less) {
            heap.pop();
            heap.push(Ranked(a));
        }
    }
    Ok(heap.into_iter().map(|r| r.0).collect())
}

/// From all-8, demote the layer with the smallest `ΔΩ/Δsize` until the
/// budget holds; the runners-up are single further demotions.
fn greedy(costs: &LayerCosts, budget_mb: f64, k: usize) -> Result<Vec<Allocation>> {
    let n = costs.layers();
    let mut bits = vec![8u32; n];
    while !within_budget(costs.size_mb(&bits), budget_mb) {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| bits[i] == 8) {
            let d_size = costs.params[i] as f64 * 4.0;
            if d_size == 0.0 {
                continue;
            }
            let ratio = (costs.term(i, 4)? - costs.term(i, 8)?) / d_size;
            if best.is_none_or(|(r, _)| ratio < r) {
                best = Some((ratio, i));
            }
        }
        let (_, i) = best.ok_or_else(|| Error::Infeasible("no layer left to demote".into()))?;
        bits[i] = 4;
    }
    let mut out = vec![allocation(costs, bits.clone())?];
    for i in (0..n).filter(|&i| bits[i] == 8) {
        let mut b = bits.clone();
        b[i] = 4;
        out.push(allocation(costs, b)?);
    }
    out.sort_by(rank);
    out.truncate(k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn costs(traces: Vec<f64>, p4: Vec<f64>, p8: Vec<f64>, params: Vec<usize>) -> LayerCosts {
        let pert = p4.iter().zip(&p8).map(|(&a, &b)| BTreeMap::from([(4, a), (8, b)])).collect();
        LayerCosts::new(traces, pert, params).unwrap()
    }

    #[test]
    fn one_term_and_zero_perturbation() {
        let c = costs(vec![2.0], vec![0.5], vec![0.5], vec![10]);
        assert_eq!(c.omega(&[4]).unwrap(), 1.0);
        let z = costs(vec![2.0, 3.0], vec![0.0; 2], vec![0.0; 2], vec![1, 1]);
        assert_eq!(z.omega(&[8, 4]).unwrap(), 0.0);
    }

    #[test]
    fn eight_bits_go_to_the_sharper_layer() {
        let c = costs(vec![10.0, 1.0], vec![1.0, 1.0], vec![0.1, 0.1], vec![1 << 20, 1 << 20]);
        let budget = c.size_mb(&[8, 4]);
        let top = pareto_allocate(&c, budget, 1).unwrap();
        assert_eq!(top[0].bits, vec![8, 4]);
        let all8 = pareto_allocate(&c, 1e9, 1).unwrap();
        assert_eq!(all8[0].bits, vec![8, 8]);
        assert!(pareto_allocate(&c, c.size_mb(&[4, 4]) * 0.5, 1).is_err());
    }

    fn random_costs(rng: &mut Rng, n: usize) -> LayerCosts {
        let p8: Vec<f64> = (0..n).map(|_| rng.range_f64(0.01, 0.1)).collect();
        let p4 = p8.iter().map(|v| v * rng.range_f64(4.0, 20.0)).collect();
        costs((0..n).map(|_| rng.range_f64(0.0, 10.0)).collect(), p4, p8, (0..n).map(|_| 1000 + rng.below(5000)).collect())
    }

    #[test]
    fn matches_brute_force_and_beats_random() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let c = random_costs(&mut rng, 6);
            let lo = c.size_mb(&[4; 6]);
            let hi = c.size_mb(&[8; 6]);
            let budget = rng.range_f64(lo, hi);
            let top = pareto_allocate(&c, budget, 64).unwrap();
            let mut all: Vec<Allocation> = (0..64u32)
                .map(|m| allocation(&c, (0..6).map(|i| if m >> i & 1 == 1 { 8 } else { 4 }).collect()).unwrap())
                .filter(|a| within_budget(a.size_mb, budget))
                .collect();
            all.sort_by(rank);
            assert_eq!(top, all);
            for _ in 0..100 {
                let bits: Vec<u32> = (0..6).map(|_| if rng.bernoulli(0.5) { 8 } else { 4 }).collect();
                if within_budget(c.size_mb(&bits), budget) {
                    assert!(top[0].omega <= c.omega(&bits).unwrap());
                }
            }
        }
    }

    #[test]
    fn demotion_never_lowers_omega() {
        let mut rng = Rng::new(10);
        for _ in 0..50 {
            let c = random_costs(&mut rng, 8);
            let bits: Vec<u32> = (0..8).map(|_| if rng.bernoulli(0.5) { 8 } else { 4 }).collect();
            for i in (0..8).filter(|&i| bits[i] == 8) {
                let mut b = bits.clone();
                b[i] = 4;
                assert!(c.omega(&b).unwrap() >= c.omega(&bits).unwrap());
            }
        }
    }

    #[test]
    fn greedy_respects_budget() {
        let mut rng = Rng::new(11);
        let c = random_costs(&mut rng, 24);
        let budget = 0.5 * (c.size_mb(&[4; 24]) + c.size_mb(&[8; 24]));
        let top = pareto_allocate(&c, budget, 5).unwrap();
        assert!(!top.is_empty() && top.len() <= 5);
        assert!(top.iter().all(|a| within_budget(a.size_mb, budget)));
    }
}
