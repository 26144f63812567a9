use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::config::AcceleratorConfig;
use super::sim::{segments, stage_row_cycles, CostReport, PipelineFlags, StageCost};
use super::workload::{Chunk, Group, Workload};
use crate::error::{Error, Result};

/// One unit of work on one chunk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub chunk: Chunk,
    pub duration: u64,
    /// Indices of tasks that must finish first.
    pub deps: Vec<usize>,
}

/// List-schedules `tasks` with one task per chunk at a time, in order of
/// readiness then index. Returns each task's finish time.
pub fn run_tasks(tasks: &[Task]) -> Result<Vec<u64>> {
    let n = tasks.len();
    let mut waiting: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            if d >= n {
                return Err(Error::Simulation(format!("task {i} depends on missing task {d}")));
            }
            dependents[d].push(i);
        }
    }
    let mut ready: BTreeMap<Chunk, BinaryHeap<Reverse<(u64, usize)>>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        if waiting[i] == 0 {
            ready.entry(t.chunk).or_default().push(Reverse((0, i)));
        }
    }
    let mut busy: BTreeMap<Chunk, bool> = BTreeMap::new();
    let mut events: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut finish = vec![0u64; n];
    let mut done = 0usize;
    let mut now = 0u64;
    loop {
        for (chunk, q) in ready.iter_mut() {
            if busy.get(chunk).copied().unwrap_or(false) {
                continue;
            }
            if let Some(Reverse((_, i))) = q.pop() {
                busy.insert(*chunk, true);
                events.push(Reverse((now + tasks[i].duration, i)));
            }
        }
        let Some(Reverse((t, i))) = events.pop() else { break };
        now = t;
        let mut finished = vec![i];
        while let Some(&Reverse((t2, j))) = events.peek() {
            if t2 != now {
                break;
            }
            events.pop();
            finished.push(j);
        }
        for i in finished {
            finish[i] = now;
            done += 1;
            busy.insert(tasks[i].chunk, false);
            for &d in &dependents[i] {
                waiting[d] -= 1;
                if waiting[d] == 0 {
                    ready.entry(tasks[d].chunk).or_default().push(Reverse((now, d)));
                }
            }
        }
    }
    if done != n {
        return Err(Error::Simulation(format!("deadlock: {} of {n} tasks can never start (dependency cycle)", n - done)));
    }
    Ok(finish)
}

/// Discrete-event timing of `w`: every stage row is a task on its chunk.
/// Chained rows wait for the same row upstream; other stages wait for the
/// whole preceding segment.
pub fn event_driven_oracle(w: &Workload, cfg: &AcceleratorConfig, flags: PipelineFlags) -> Result<CostReport> {
    cfg.validate()?;
    w.validate()?;
    let times: Vec<u64> = w.stages.iter().map(|s| stage_row_cycles(s, cfg)).collect();
    let mut base = Vec::with_capacity(w.stages.len());
    let mut count = 0usize;
    for s in &w.stages {
        base.push(count);
        count += s.rows as usize;
    }
    let id = |stage: usize, row: u64| base[stage] + row as usize;
    let mut tasks = Vec::with_capacity(count);
    let segs = segments(w, flags);
    let mut seg_last: Option<usize> = None;
    for seg in &segs {
        for i in seg.clone() {
            let s = &w.stages[i];
            for r in 0..s.rows {
                let mut deps = Vec::with_capacity(2);
                if r > 0 {
                    deps.push(id(i, r - 1));
                }
                if i > seg.start {
                    deps.push(id(i - 1, r));
                } else if r == 0 {
                    deps.extend(seg_last);
                }
                tasks.push(Task { chunk: s.kind.chunk(), duration: times[i], deps });
            }
        }
        let last = seg.end - 1;
        seg_last = Some(id(last, w.stages[last].rows - 1));
    }
    let finish = run_tasks(&tasks)?;
    let mut group_cycles: BTreeMap<Group, u64> = BTreeMap::new();
    let mut prev_end = 0u64;
    for seg in &segs {
        let end = seg.clone().map(|i| finish[id(i, w.stages[i].rows - 1)]).max().unwrap_or(prev_end);
        *group_cycles.entry(w.stages[seg.start].group).or_default() += end - prev_end;
        prev_end = end;
    }
    let stages = w
        .stages
        .iter()
        .zip(&times)
        .map(|(s, &t)| StageCost {
            name: s.name.clone(),
            kind: s.kind,
            group: s.group,
            rows: s.rows,
            row_cycles: t,
            busy_cycles: t * s.rows,
            products: s.products(),
        })
        .collect();
    Ok(CostReport {
        pipeline: flags,
        total_cycles: prev_end,
        latency_us: prev_end as f64 / cfg.frequency_mhz,
        group_cycles,
        stages,
        energy: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_is_reported_as_deadlock() {
        let t = |deps| Task { chunk: Chunk::Ln, duration: 1, deps };
        assert!(matches!(run_tasks(&[t(vec![1]), t(vec![0])]), Err(Error::Simulation(m)) if m.contains("deadlock")));
        assert_eq!(run_tasks(&[t(vec![]), t(vec![0])]).unwrap(), vec![1, 2]);
    }

    #[test]
    fn shared_chunk_serializes_independent_tasks() {
        let t = |chunk| Task { chunk, duration: 3, deps: vec![] };
        assert_eq!(run_tasks(&[t(Chunk::Ln), t(Chunk::Ln), t(Chunk::Psmac)]).unwrap(), vec![3, 6, 3]);
    }
}
