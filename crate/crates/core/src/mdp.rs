//! Fully observed MDP solvers: infinite-horizon value iteration for the
//! tail value `v_MDP` and backward induction for finite horizons.

use serde::Serialize;
use thiserror::Error;

use crate::model::PomdpInstance;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpValue {
    pub values: Vec<f64>,
    pub greedy: Vec<usize>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("discount {0} is not contractive")]
    DiscountNotContractive(f64),
    #[error("value iteration stopped after {} iterations with residual {}", best.iterations, best.residual)]
    IterationLimit { best: MdpValue },
}

/// Default residual target `1e-10 · max(1, |r|_∞)`.
pub fn default_tolerance(inst: &PomdpInstance) -> f64 {
    1e-10 * inst.reward_sup().max(1.0)
}

/// One Bellman backup; returns the new values and the greedy actions
/// (ties to the lowest action index).
pub fn bellman_backup(inst: &PomdpInstance, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (ns, na) = (inst.num_states(), inst.num_actions());
    let gamma = inst.discount();
    let mut out = vec![0.0; ns];
    let mut greedy = vec![0; ns];
    for s in 0..ns {
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let q = inst.reward(s, a) + gamma * dot(inst.transition_row(a, s), v);
            if q > best {
                best = q;
                greedy[s] = a;
            }
        }
        out[s] = best;
    }
    (out, greedy)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Value iteration from `v = 0` until the Bellman residual is at most `tol`.
pub fn solve_mdp_infinite(inst: &PomdpInstance, tol: f64, max_iter: usize) -> Result<MdpValue, MdpError> {
    let gamma = inst.discount();
    if !(gamma < 1.0) {
        return Err(MdpError::DiscountNotContractive(gamma));
    }
    let mut v = vec![0.0; inst.num_states()];
    let mut iterations = 0;
    loop {
        let (next, greedy) = bellman_backup(inst, &v);
        let residual = sup_diff(&next, &v);
        if residual <= tol {
            return Ok(MdpValue { values: v, greedy, residual, iterations });
        }
        if iterations >= max_iter {
            return Err(MdpError::IterationLimit { best: MdpValue { values: v, greedy, residual, iterations } });
        }
        v = next;
        iterations += 1;
    }
}

/// [`solve_mdp_infinite`] with the default tolerance and a generous cap.
pub fn solve_mdp_default(inst: &PomdpInstance) -> Result<MdpValue, MdpError> {
    solve_mdp_infinite(inst, default_tolerance(inst), 1_000_000)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteMdpValue {
    /// `Σ_s b(s) v_0(s)` for the instance's initial belief.
    pub value: f64,
    /// `values[t][s]` for `t = 0..=T`.
    pub values: Vec<Vec<f64>>,
}

/// Backward induction with stage rewards `rewards[t][s * |A| + a]`, `t = 0..=T`.
pub fn solve_mdp_finite(inst: &PomdpInstance, rewards: &[Vec<f64>]) -> FiniteMdpValue {
    let (ns, na) = (inst.num_states(), inst.num_actions());
    assert!(!rewards.is_empty(), "at least one stage is required");
    let horizon = rewards.len() - 1;
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..=horizon).rev() {
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let mut q = rewards[t][s * na + a];
                if t < horizon {
                    q += dot(inst.transition_row(a, s), &values[t + 1]);
                }
                best = best.max(q);
            }
            values[t][s] = best;
        }
    }
    let value = dot(inst.initial_belief().probs(), &values[0]);
    FiniteMdpValue { value, values }
}
