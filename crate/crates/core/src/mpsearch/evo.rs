use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Mutex;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bitconfig::{model_size_mb, BIT_CHOICES};
use super::omega::within_budget;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population: usize,
    /// Children per iteration from crossover, and again from mutation.
    pub offspring: usize,
    /// Per-gene mutation probability.
    pub mutation_prob: f64,
    pub iterations: usize,
    pub seed: u64,
    pub budget_mb: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { population: 25, offspring: 10, mutation_prob: 0.5, iterations: 20, seed: 0, budget_mb: f64::INFINITY }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("search population must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config("mutation probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub best_acc: f64,
    pub population_mean_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub bits: Vec<u32>,
    pub accuracy: f64,
    pub size_mb: f64,
    pub log: Vec<IterationLog>,
    /// Distinct configurations evaluated.
    pub evaluations: usize,
}

impl SearchResult {
    /// `iteration,best_acc,population_mean_acc` rows.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,best_acc,population_mean_acc\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.iteration, r.best_acc, r.population_mean_acc);
        }
        s
    }
}

#[derive(Clone, Debug)]
struct Member {
    bits: Vec<u32>,
    acc: f64,
    size: f64,
}

/// Higher accuracy, then smaller size, then the bit vector.
fn better(a: &Member, b: &Member) -> Ordering {
    b.acc.total_cmp(&a.acc).then(a.size.total_cmp(&b.size)).then_with(|| a.bits.cmp(&b.bits))
}

struct Evaluator<'a, F> {
    eval: &'a F,
    params: &'a [usize],
    memo: HashMap<Vec<u32>, f64>,
}

impl<F: Fn(&[u32]) -> Result<f64> + Sync> Evaluator<'_, F> {
    /// Scores `cands` (already deduplicated) in parallel, reusing past scores.
    fn score(&mut self, cands: Vec<Vec<u32>>) -> Result<Vec<Member>> {
        let fresh: Vec<&Vec<u32>> = cands.iter().filter(|c| !self.memo.contains_key(*c)).collect();
        let eval = self.eval;
        let accs = fresh.par_iter().map(|c| eval(c)).collect::<Result<Vec<f64>>>()?;
        for (c, a) in fresh.into_iter().zip(accs) {
            self.memo.insert(c.clone(), a);
        }
        Ok(cands
            .into_iter()
            .map(|bits| Member { acc: self.memo[&bits], size: model_size_mb(self.params, &bits), bits })
            .collect())
    }
}

fn other_choice(b: u32) -> u32 {
    *BIT_CHOICES.iter().find(|&&c| c != b).unwrap_or(&b)
}

fn log_row(iteration: usize, pop: &[Member]) -> IterationLog {
    IterationLog {
        iteration,
        best_acc: pop[0].acc,
        population_mean_acc: pop.iter().map(|m| m.acc).sum::<f64>() / pop.len() as f64,
    }
}

/// Thread-safe memo around an accuracy function, shareable across searches.
pub struct EvalCache<F> {
    eval: F,
    memo: Mutex<HashMap<Vec<u32>, f64>>,
}

impl<F: Fn(&[u32]) -> Result<f64> + Sync> EvalCache<F> {
    pub fn new(eval: F) -> Self {
        Self { eval, memo: Mutex::new(HashMap::new()) }
    }

    pub fn get(&self, bits: &[u32]) -> Result<f64> {
        if let Some(&a) = self.memo.lock().unwrap_or_else(|e| e.into_inner()).get(bits) {
            return Ok(a);
        }
        let a = (self.eval)(bits)?;
        self.memo.lock().unwrap_or_else(|e| e.into_inner()).insert(bits.to_vec(), a);
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.memo.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Crossover, mutation, budget filter and accuracy ranking, seeded from `init`.
/// Candidate scoring runs in parallel; every population update is a
/// sequential reduction, so the result depends only on the seed.
pub fn evo_search<F>(init: &[Vec<u32>], params: &[usize], eval: F, cfg: &SearchConfig) -> Result<SearchResult>
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let n = params.len();
    let mut seen = std::collections::HashSet::new();
    let start: Vec<Vec<u32>> = init
        .iter()
        .filter(|b| b.len() == n && within_budget(model_size_mb(params, b), cfg.budget_mb))
        .filter(|b| seen.insert((*b).clone()))
        .cloned()
        .collect();
    if start.is_empty() {
        return Err(Error::Infeasible("no initial configuration fits the size budget".into()));
    }
    let mut ev = Evaluator { eval: &eval, params, memo: HashMap::new() };
    let mut pop = ev.score(start)?;
    pop.sort_by(better);
    pop.truncate(cfg.population);
    let mut log = vec![log_row(0, &pop)];
    let mut rng = Rng::new(cfg.seed);

    for it in 1..=cfg.iterations {
        let mut children: Vec<Vec<u32>> = Vec::with_capacity(2 * cfg.offspring);
        for _ in 0..cfg.offspring {
            let a = rng.below(pop.len());
            let b = if pop.len() > 1 { (a + 1 + rng.below(pop.len() - 1)) % pop.len() } else { a };
            let cut = if n > 1 { 1 + rng.below(n - 1) } else { 0 };
            children.push(pop[a].bits[..cut].iter().chain(&pop[b].bits[cut..]).copied().collect());
        }
        for _ in 0..cfg.offspring {
            let p = &pop[rng.below(pop.len())].bits;
            children.push(p.iter().map(|&g| if rng.bernoulli(cfg.mutation_prob) { other_choice(g) } else { g }).collect());
        }
        let mut fresh = Vec::new();
        for c in children {
            let dup = pop.iter().any(|m| m.bits == c) || fresh.contains(&c);
            if !dup && within_budget(model_size_mb(params, &c), cfg.budget_mb) {
                fresh.push(c);
            }
        }
        pop.extend(ev.score(fresh)?);
        pop.sort_by(better);
        pop.truncate(cfg.population);
        log.push(log_row(it, &pop));
    }
    let best = &pop[0];
    Ok(SearchResult { bits: best.bits.clone(), accuracy: best.acc, size_mb: best.size, log, evaluations: ev.memo.len() })
}

/// Scores every feasible assignment and returns the best one.
pub fn brute_force_search<F>(params: &[usize], budget_mb: f64, eval: F) -> Result<SearchResult>
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    let n = params.len();
    if n > 24 {
        return Err(Error::InvalidArgument(format!("{n} layers is too many to enumerate")));
    }
    let cands: Vec<Vec<u32>> = (0u64..1 << n)
        .map(|m| (0..n).map(|i| if m >> i & 1 == 1 { 8 } else { 4 }).collect::<Vec<u32>>())
        .filter(|b| within_budget(model_size_mb(params, b), budget_mb))
        .collect();
    if cands.is_empty() {
        return Err(Error::Infeasible(format!("no configuration fits {budget_mb} MB")));
    }
    let mut ev = Evaluator { eval: &eval, params, memo: HashMap::new() };
    let mut all = ev.score(cands)?;
    all.sort_by(better);
    let best = &all[0];
    Ok(SearchResult { bits: best.bits.clone(), accuracy: best.acc, size_mb: best.size, log: Vec::new(), evaluations: all.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Accuracy that rewards 8 bits on a hidden subset of layers.
    fn synthetic(target: &[bool]) -> impl Fn(&[u32]) -> Result<f64> + Sync + '_ {
        move |b: &[u32]| Ok(b.iter().zip(target).map(|(&x, &t)| if t && x == 8 { 1.0 } else { 0.0 }).sum::<f64>() / 10.0)
    }

    #[test]
    fn single_point_space_is_returned() {
        let params = [100usize];
        let cfg = SearchConfig { budget_mb: model_size_mb(&params, &[4]), ..Default::default() };
        let r = evo_search(&[vec![4]], &params, |_| Ok(0.5), &cfg).unwrap();
        assert_eq!(r.bits, vec![4]);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn elitist_and_finds_optimum() {
        let params = vec![1000usize; 8];
        let target = [true, false, true, false, false, true, false, false];
        let budget = model_size_mb(&params, &[8, 8, 8, 4, 4, 4, 4, 4]);
        let opt = brute_force_search(&params, budget, synthetic(&target)).unwrap();
        assert_eq!(opt.bits, vec![8, 4, 8, 4, 4, 8, 4, 4]);
        let mut hits = 0;
        for seed in 0..10 {
            let cfg = SearchConfig { seed, budget_mb: budget, ..Default::default() };
            let r = evo_search(&[vec![4; 8]], &params, synthetic(&target), &cfg).unwrap();
            assert!(r.log.windows(2).all(|w| w[1].best_acc >= w[0].best_acc));
            assert!(within_budget(r.size_mb, budget));
            hits += (r.accuracy == opt.accuracy) as usize;
            let again = evo_search(&[vec![4; 8]], &params, synthetic(&target), &cfg).unwrap();
            assert_eq!(again, r);
        }
        assert!(hits >= 9, "{hits}");
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let params = [1usize << 20; 2];
        let cfg = SearchConfig { budget_mb: 0.1, ..Default::default() };
        assert!(matches!(evo_search(&[vec![8, 8]], &params, |_| Ok(1.0), &cfg), Err(Error::Infeasible(_))));
    }
}
