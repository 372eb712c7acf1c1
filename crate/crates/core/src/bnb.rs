//! Best-first branch and bound over the binary policy columns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::formulate::{MemorylessModel, RewardSpec};
use crate::lp::{Basis, LpError, LpParams, LpSession, LpStatus};
use crate::mdp::solve_mdp_finite;
use crate::model::PomdpInstance;
use crate::policy::{evaluate_exact, MemorylessPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpParams {
    pub gap_tol: f64,
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
    /// Emit a progress line every this many nodes.
    pub log_every: Option<usize>,
    pub lp: LpParams,
}

impl Default for MilpParams {
    fn default() -> Self {
        MilpParams { gap_tol: 1e-6, time_limit: None, node_limit: None, log_every: None, lp: LpParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MilpStatus {
    Optimal,
    GapLimit,
    TimeLimit,
    NodeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub policy: Option<MemorylessPolicy>,
    pub incumbent: f64,
    pub bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub root_bound: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BnbError {
    #[error("LP failure at node {node}: {source}")]
    Lp { node: usize, source: LpError },
    #[error("model has no policy columns")]
    NoPolicyColumns,
}

pub fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((bound - incumbent) / bound.abs().max(1e-12)).max(0.0)
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixings: Vec<(usize, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: higher bound first, then deeper, then older.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

fn round_policy(model: &MemorylessModel, x: &[f64]) -> MemorylessPolicy {
    let idx = &model.index;
    let actions: Vec<Vec<usize>> = (0..=idx.horizon)
        .map(|t| {
            (0..idx.no)
                .map(|o| {
                    // The first stage reads observation 0 so the rule stays blind.
                    let o = if t == 0 { 0 } else { o };
                    let mut best = 0;
                    for a in 1..idx.na {
                        if x[idx.delta(t, o, a)] > x[idx.delta(t, o, best)] {
                            best = a;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    MemorylessPolicy::deterministic(&actions, idx.na).expect("rounded policy is valid")
}

/// Most fractional δ column, earliest in (t, o, a) order on ties.
fn branching_column(model: &MemorylessModel, x: &[f64]) -> Option<usize> {
    let idx = &model.index;
    let mut best: Option<(f64, usize)> = None;
    for t in 0..=idx.horizon {
        for o in 0..idx.no {
            for a in 0..idx.na {
                let j = idx.delta(t, o, a);
                let frac = x[j].min(1.0 - x[j]);
                if frac > 1e-6 && best.map_or(true, |(f, _)| frac > f + 1e-12) {
                    best = Some((frac, j));
                }
            }
        }
    }
    best.map(|b| b.1)
}

/// Maximizes the model over binary policies. `reward` must be the spec the
/// model was built from; it drives the exact evaluation of incumbents.
pub fn solve_milp(
    inst: &PomdpInstance,
    model: &MemorylessModel,
    reward: &RewardSpec,
    params: &MilpParams,
) -> Result<MilpResult, BnbError> {
    let start = Instant::now();
    let idx = &model.index;
    if idx.na == 0 || idx.no == 0 {
        return Err(BnbError::NoPolicyColumns);
    }
    let deadline = params.time_limit.map(|d| start + d);
    let mut lp_params = params.lp;
    lp_params.deadline = match (lp_params.deadline, deadline) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let session = LpSession::new(&model.lp);
    let (base_lo, base_hi) = session.column_bounds();
    let (base_lo, base_hi) = (base_lo.to_vec(), base_hi.to_vec());

    // Seed incumbent: the first feasible action everywhere, honouring any
    // δ fixings already present in the model.
    let seed_x: Vec<f64> = (0..model.lp.num_columns())
        .map(|j| if base_lo[j] > 0.0 { 2.0 } else if base_hi[j] <= 0.0 { -1.0 } else { 0.0 })
        .collect();
    let seed = round_policy(model, &seed_x);
    let seed_feasible = (0..=idx.horizon).all(|t| {
        (0..idx.no).all(|o| {
            let a = seed.action(t, o).unwrap();
            let j = idx.delta(t, o, a);
            base_hi[j] >= 1.0 && (0..idx.na).all(|b| b == a || base_lo[idx.delta(t, o, b)] <= 0.0)
        })
    });
    let mut incumbent = f64::NEG_INFINITY;
    let mut best_policy = None;
    if seed_feasible {
        incumbent = evaluate_exact(inst, &seed, reward).expect("horizon matches").value;
        best_policy = Some(seed);
    }
    let mdp_bound = solve_mdp_finite(inst, &reward.table).value;

    let threshold = |inc: f64| inc + params.gap_tol * inc.abs().max(1.0);
    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: mdp_bound, depth: 0, seq: 0, fixings: Vec::new(), basis: None });
    let mut seq = 1;
    let mut nodes = 0;
    let mut pruned_bound = f64::NEG_INFINITY;
    let mut root_bound = mdp_bound;
    let mut stopped = None;

    while let Some(node) = heap.peek() {
        if nodes > 0 && node.bound <= threshold(incumbent) {
            // Everything left is dominated.
            pruned_bound = pruned_bound.max(node.bound);
            heap.clear();
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stopped = Some(MilpStatus::TimeLimit);
            break;
        }
        if params.node_limit.is_some_and(|n| nodes >= n) {
            stopped = Some(MilpStatus::NodeLimit);
            break;
        }
        let node = heap.pop().unwrap();
        let mut lo = base_lo.clone();
        let mut hi = base_hi.clone();
        for &(j, v) in &node.fixings {
            lo[j] = v;
            hi[j] = v;
        }
        let sol = session
            .solve(Some(&lo), Some(&hi), node.basis.as_ref(), &lp_params)
            .map_err(|source| BnbError::Lp { node: nodes, source })?;
        nodes += 1;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::TimeLimit | LpStatus::IterationLimit => {
                heap.push(node);
                stopped = Some(MilpStatus::TimeLimit);
                break;
            }
            LpStatus::Unbounded => {
                return Err(BnbError::Lp { node: nodes - 1, source: LpError::NumericalBreakdown("unbounded relaxation".into()) })
            }
        }
        let bound = sol.objective.min(node.bound);
        if node.depth == 0 {
            root_bound = bound;
        }

        let rounded = round_policy(model, &sol.x);
        let value = evaluate_exact(inst, &rounded, reward).expect("horizon matches").value;
        let rounded_ok = (0..=idx.horizon)
            .all(|t| (0..idx.no).all(|o| hi[idx.delta(t, o, rounded.action(t, o).unwrap())] >= 1.0));
        if rounded_ok && value > incumbent {
            incumbent = value;
            best_policy = Some(rounded);
        }

        if let Some(log_every) = params.log_every {
            if log_every > 0 && nodes % log_every == 0 {
                let open = heap.iter().map(|n| n.bound).fold(bound, f64::max);
                log::info!("node={nodes} bound={open:.9} incumbent={incumbent:.9} gap={:.3e}", relative_gap(open, incumbent));
            }
        }

        if bound <= threshold(incumbent) {
            pruned_bound = pruned_bound.max(bound);
            continue;
        }
        let Some(j) = branching_column(model, &sol.x) else {
            // Integral relaxation: its rounding is the point itself.
            pruned_bound = pruned_bound.max(bound);
            continue;
        };
        let (t, o) = locate_delta(model, j);
        let na = idx.na;
        let mut one = node.fixings.clone();
        for a in 0..na {
            let k = idx.delta(t, o, a);
            one.push((k, if k == j { 1.0 } else { 0.0 }));
        }
        let mut zero = node.fixings;
        zero.push((j, 0.0));
        for fixings in [one, zero] {
            heap.push(Node { bound, depth: node.depth + 1, seq, fixings, basis: sol.basis.clone() });
            seq += 1;
        }
    }

    let open = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
    let bound = open.max(pruned_bound).max(incumbent);
    let bound = if bound.is_finite() { bound } else { mdp_bound };
    let gap = relative_gap(bound, incumbent);
    let status = match stopped {
        _ if best_policy.is_none() && heap.is_empty() && stopped.is_none() => MilpStatus::Infeasible,
        Some(s) => s,
        None if gap <= params.gap_tol => MilpStatus::Optimal,
        None => MilpStatus::GapLimit,
    };
    Ok(MilpResult {
        status,
        policy: best_policy,
        incumbent,
        bound,
        gap,
        nodes,
        root_bound,
        wall_time: start.elapsed(),
    })
}

fn locate_delta(model: &MemorylessModel, col: usize) -> (usize, usize) {
    let idx = &model.index;
    for t in 0..=idx.horizon {
        let first = idx.delta(t, 0, 0);
        if col >= first && col < first + idx.no * idx.na {
            return (t, (col - first) / idx.na);
        }
    }
    panic!("column {col} is not a policy column")
}
