//! Rolling-horizon controller: at belief `b`, solve the tilde-reward
//! memoryless problem of horizon `T_r` and play its first action.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::Serialize;

use super::PolicyError;
use crate::bnb::{solve_milp, MilpParams, MilpStatus};
use crate::formulate::{build_memoryless_model, ModelOptions, RewardSpec};
use crate::mdp::MdpValue;
use crate::model::{Belief, PomdpInstance};

/// Beliefs are cached on a grid of this spacing.
pub const BELIEF_QUANTUM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmfOptions {
    pub rolling: usize,
    pub cuts: bool,
    pub milp: MilpParams,
}

impl Default for SmfOptions {
    fn default() -> Self {
        SmfOptions { rolling: 2, cuts: true, milp: MilpParams::default() }
    }
}

#[derive(Debug, Clone, Copy)]
struct Decision {
    action: usize,
    proven: bool,
}

/// Counts derived from the set of distinct cached beliefs, so they do not
/// depend on the order in which decisions were requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub decisions: u64,
    pub distinct_beliefs: usize,
    pub non_optimal_solves: usize,
}

impl CacheStats {
    pub fn cached_fraction(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            1.0 - self.distinct_beliefs as f64 / self.decisions as f64
        }
    }
}

pub struct SmfController {
    inst: PomdpInstance,
    tail: MdpValue,
    opts: SmfOptions,
    cache: RwLock<HashMap<Vec<i64>, Decision>>,
    decisions: AtomicU64,
}

fn quantize(b: &Belief) -> Vec<i64> {
    b.probs().iter().map(|p| (p / BELIEF_QUANTUM).round() as i64).collect()
}

impl SmfController {
    pub fn new(inst: &PomdpInstance, tail: &MdpValue, opts: SmfOptions) -> Self {
        SmfController {
            inst: inst.clone(),
            tail: tail.clone(),
            opts,
            cache: RwLock::new(HashMap::new()),
            decisions: AtomicU64::new(0),
        }
    }

    pub fn instance(&self) -> &PomdpInstance {
        &self.inst
    }

    pub fn options(&self) -> &SmfOptions {
        &self.opts
    }

    /// Best value reachable from `belief` after committing to each first
    /// action, with whether every search finished with a proof.
    pub fn q_values(&self, belief: &Belief) -> Result<(Vec<f64>, bool), PolicyError> {
        let inst = self.inst.with_initial_belief(belief.clone()).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        let spec = RewardSpec::tilde(&inst, self.opts.rolling, &self.tail);
        let base = build_memoryless_model(&inst, &spec, ModelOptions { cuts: self.opts.cuts, integral: true })
            .map_err(|e| PolicyError::Solver(e.to_string()))?;
        let (na, no) = (inst.num_actions(), inst.num_observations());
        let mut q = Vec::with_capacity(na);
        let mut proven = true;
        for a in 0..na {
            let mut model = base.clone();
            for o in 0..no {
                for b in 0..na {
                    let col = &mut model.lp.columns[model.index.delta(0, o, b)];
                    let v = if a == b { 1.0 } else { 0.0 };
                    col.lower = v;
                    col.upper = v;
                }
            }
            let r = solve_milp(&inst, &model, &spec, &self.opts.milp).map_err(|e| PolicyError::Solver(e.to_string()))?;
            if r.policy.is_none() {
                return Err(PolicyError::SolverTimedOutWithNoIncumbent);
            }
            proven &= r.status == MilpStatus::Optimal;
            q.push(r.incumbent);
        }
        Ok((q, proven))
    }

    /// SMF action at `belief`; ties go to the lowest action index.
    pub fn action(&self, belief: &Belief) -> Result<usize, PolicyError> {
        self.decisions.fetch_add(1, Ordering::Relaxed);
        if self.inst.num_actions() == 1 {
            return Ok(0);
        }
        let key = quantize(belief);
        if let Some(d) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(d.action);
        }
        let weights: Vec<f64> = key.iter().map(|&k| k as f64).collect();
        let rounded = Belief::from_weights(&weights).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        let (q, proven) = self.q_values(&rounded)?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * best.abs().max(1.0);
        let action = q.iter().position(|&v| v >= best - tol).expect("nonempty action set");
        // Identical keys always give identical decisions, so a racing
        // insert is harmless.
        self.cache.write().expect("cache lock").insert(key, Decision { action, proven });
        Ok(action)
    }

    pub fn stats(&self) -> CacheStats {
        let cache = self.cache.read().expect("cache lock");
        CacheStats {
            decisions: self.decisions.load(Ordering::Relaxed),
            distinct_beliefs: cache.len(),
            non_optimal_solves: cache.values().filter(|d| !d.proven).count(),
        }
    }
}
