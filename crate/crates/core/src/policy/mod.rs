//! Memoryless policies: exact evaluation through the moment recursion,
//! exhaustive enumeration, and the SMF rolling-horizon controller.

mod smf;

pub use smf::{CacheStats, SmfController, SmfOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulate::{MomentSolution, RewardSpec};
use crate::model::PomdpInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy horizon {policy} does not match reward horizon {reward}")]
    HorizonMismatch { policy: usize, reward: usize },
    #[error("search space of {count} policies exceeds the guard of {guard}")]
    SearchSpaceExceedsGuard { count: u128, guard: u128 },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("solver stopped without an incumbent")]
    SolverTimedOutWithNoIncumbent,
    #[error("solver failed: {0}")]
    Solver(String),
}

/// `δ^t_{a|o}` for `t = 0..=T`, stored as `probs[t][o * |A| + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessPolicy {
    pub horizon: usize,
    pub num_observations: usize,
    pub num_actions: usize,
    pub probs: Vec<Vec<f64>>,
    pub deterministic: bool,
}

impl MemorylessPolicy {
    /// Deterministic policy from `actions[t][o]`; the first stage must not
    /// depend on the observation.
    pub fn deterministic(actions: &[Vec<usize>], num_actions: usize) -> Result<Self, PolicyError> {
        let no = actions.first().map_or(0, Vec::len);
        let probs = actions
            .iter()
            .map(|row| {
                let mut p = vec![0.0; no * num_actions];
                for (o, &a) in row.iter().enumerate() {
                    p[o * num_actions + a] = 1.0;
                }
                p
            })
            .collect();
        Self::from_probs(probs, no, num_actions)
    }

    /// Checks the simplex rows, the blind first stage and the
    /// deterministic flag.
    pub fn from_probs(probs: Vec<Vec<f64>>, num_observations: usize, num_actions: usize) -> Result<Self, PolicyError> {
        let (no, na) = (num_observations, num_actions);
        if probs.is_empty() {
            return Err(PolicyError::Invalid("no stages".into()));
        }
        for (t, row) in probs.iter().enumerate() {
            if row.len() != no * na {
                return Err(PolicyError::Invalid(format!("stage {t} has {} entries, expected {}", row.len(), no * na)));
            }
            for o in 0..no {
                let r = &row[o * na..(o + 1) * na];
                if r.iter().any(|p| !(*p >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(PolicyError::Invalid(format!("stage {t}, observation {o} is not a distribution")));
                }
            }
        }
        for o in 1..no {
            for a in 0..na {
                if (probs[0][o * na + a] - probs[0][a]).abs() > 1e-9 {
                    return Err(PolicyError::Invalid("first stage depends on the observation".into()));
                }
            }
        }
        let deterministic = probs.iter().flatten().all(|p| *p == 0.0 || *p == 1.0);
        Ok(MemorylessPolicy { horizon: probs.len() - 1, num_observations: no, num_actions: na, probs, deterministic })
    }

    /// Action at `(t, o)` for a deterministic policy.
    pub fn action(&self, t: usize, o: usize) -> Option<usize> {
        let na = self.num_actions;
        self.deterministic.then(|| (0..na).find(|&a| self.probs[t][o * na + a] == 1.0).expect("deterministic row"))
    }

    #[inline]
    pub fn prob(&self, t: usize, o: usize, a: usize) -> f64 {
        self.probs[t][o * self.num_actions + a]
    }

    pub fn to_json(&self) -> PolicyJson {
        let (no, na) = (self.num_observations, self.num_actions);
        if self.deterministic {
            PolicyJson {
                schema: "v1".into(),
                horizon: self.horizon,
                actions: Some((0..=self.horizon).map(|t| (0..no).map(|o| self.action(t, o).unwrap()).collect()).collect()),
                probs: None,
                deterministic: true,
            }
        } else {
            PolicyJson {
                schema: "v1".into(),
                horizon: self.horizon,
                actions: None,
                probs: Some(self.probs.iter().map(|r| r.chunks(na).map(<[f64]>::to_vec).collect()).collect()),
                deterministic: false,
            }
        }
    }

    pub fn from_json(j: &PolicyJson, num_actions: usize) -> Result<Self, PolicyError> {
        let p = match (&j.actions, &j.probs) {
            (Some(acts), _) => Self::deterministic(acts, num_actions)?,
            (None, Some(probs)) => {
                let no = probs.first().map_or(0, Vec::len);
                Self::from_probs(probs.iter().map(|r| r.concat()).collect(), no, num_actions)?
            }
            (None, None) => return Err(PolicyError::Invalid("neither actions nor probs given".into())),
        };
        if p.horizon != j.horizon {
            return Err(PolicyError::Invalid(format!("horizon field {} but {} stages", j.horizon, p.horizon + 1)));
        }
        Ok(p)
    }
}

/// Serialized policy, `actions[t][o]` or `probs[t][o][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyJson {
    pub schema: String,
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub actions: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probs: Option<Vec<Vec<Vec<f64>>>>,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub moments: MomentSolution,
}

/// One step of the recursion: given `μ_s^t` and (for `t ≥ 1`) `μ_sa^{t-1}`,
/// fills `μ_soa^t`, `μ_sa^t` and returns `μ_s^{t+1}`.
fn stage(
    inst: &PomdpInstance,
    t: usize,
    mu_s: &[f64],
    prev_sa: Option<&[f64]>,
    delta: &[f64],
    mu_soa: &mut [f64],
    mu_sa: &mut [f64],
) -> Vec<f64> {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    mu_sa.iter_mut().for_each(|v| *v = 0.0);
    for s in 0..ns {
        for o in 0..no {
            let q = match prev_sa {
                Some(prev) if t > 0 && inst.action_dependent_emission() => {
                    let mut acc = 0.0;
                    for sp in 0..ns {
                        for ap in 0..na {
                            acc += inst.emission(ap, s, o) * inst.transition(ap, sp, s) * prev[sp * na + ap];
                        }
                    }
                    acc
                }
                _ if t == 0 => inst.initial_emission(s, o) * mu_s[s],
                _ => inst.emission(0, s, o) * mu_s[s],
            };
            for a in 0..na {
                let v = delta[o * na + a] * q;
                mu_soa[(s * no + o) * na + a] = v;
                mu_sa[s * na + a] += v;
            }
        }
    }
    let mut next = vec![0.0; ns];
    for sp in 0..ns {
        for a in 0..na {
            let m = mu_sa[sp * na + a];
            if m != 0.0 {
                for (s, p) in inst.transition_row(a, sp).iter().enumerate() {
                    next[s] += p * m;
                }
            }
        }
    }
    next
}

/// Value and moment vector of `policy` under `reward`.
pub fn evaluate_exact(inst: &PomdpInstance, policy: &MemorylessPolicy, reward: &RewardSpec) -> Result<Evaluation, PolicyError> {
    if policy.horizon != reward.horizon() {
        return Err(PolicyError::HorizonMismatch { policy: policy.horizon, reward: reward.horizon() });
    }
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let horizon = policy.horizon;
    let mut mu_s = vec![inst.initial_belief().probs().to_vec()];
    let mut mu_sa: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
    let mut mu_soa: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
    let mut value = 0.0;
    for t in 0..=horizon {
        let mut soa = vec![0.0; ns * no * na];
        let mut sa = vec![0.0; ns * na];
        let next = stage(inst, t, &mu_s[t], mu_sa.last().map(Vec::as_slice), &policy.probs[t], &mut soa, &mut sa);
        value += reward.table[t].iter().zip(&sa).map(|(r, m)| r * m).sum::<f64>();
        mu_s.push(next);
        mu_sa.push(sa);
        mu_soa.push(soa);
    }
    let moments = MomentSolution {
        horizon,
        mu_s,
        mu_sa,
        mu_soa,
        mu_cut: None,
        delta: policy.probs.clone(),
        deterministic: policy.deterministic,
        invariant_violation: None,
    };
    Ok(Evaluation { value, moments })
}

/// Fills the extended moments `μ^t_{s'a'soa} = δ^t_{a|o} p(o|s,a') p(s|s',a') μ^{t-1}_{s'a'}`.
pub fn fill_cut_moments(inst: &PomdpInstance, moments: &mut MomentSolution) {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let cut = (1..=moments.horizon)
        .map(|t| {
            let mut v = Vec::with_capacity(ns * na * ns * no * na);
            for sp in 0..ns {
                for ap in 0..na {
                    let m = moments.mu_sa[t - 1][sp * na + ap];
                    for s in 0..ns {
                        let w = inst.transition(ap, sp, s) * m;
                        for o in 0..no {
                            let wo = inst.emission(ap, s, o) * w;
                            for a in 0..na {
                                v.push(moments.delta[t][o * na + a] * wo);
                            }
                        }
                    }
                }
            }
            v
        })
        .collect();
    moments.mu_cut = Some(cut);
}

/// Number of deterministic memoryless policies, `|A| · |A|^{|O| T}`.
pub fn count_deterministic(num_actions: usize, num_observations: usize, horizon: usize) -> u128 {
    let a = num_actions as u128;
    let exp = (num_observations * horizon) as u32;
    a.checked_pow(exp).and_then(|v| v.checked_mul(a)).unwrap_or(u128::MAX)
}

/// Best deterministic memoryless policy by exhaustive search; ties go to
/// the lexicographically smallest `actions[t][o]` table.
pub fn enumerate_optimal(
    inst: &PomdpInstance,
    reward: &RewardSpec,
    guard: u128,
) -> Result<(MemorylessPolicy, f64), PolicyError> {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let horizon = reward.horizon();
    let count = count_deterministic(na, no, horizon);
    if count > guard {
        return Err(PolicyError::SearchSpaceExceedsGuard { count, guard });
    }

    struct Search<'a> {
        inst: &'a PomdpInstance,
        reward: &'a RewardSpec,
        ns: usize,
        na: usize,
        no: usize,
        choice: Vec<Vec<usize>>,
        best: Option<(f64, Vec<Vec<usize>>)>,
    }

    impl Search<'_> {
        fn go(&mut self, t: usize, mu_s: &[f64], prev_sa: Option<&[f64]>, acc: f64) {
            let (na, no) = (self.na, self.no);
            let rules = if t == 0 { na } else { na.pow(no as u32) };
            let mut soa = vec![0.0; self.ns * no * na];
            let mut sa = vec![0.0; self.ns * na];
            for code in 0..rules {
                let mut delta = vec![0.0; no * na];
                let mut c = code;
                // Most significant digit is observation 0 so codes run in lexicographic order.
                for o in (0..no).rev() {
                    let a = if t == 0 { code } else { c % na };
                    c /= na;
                    self.choice[t][o] = a;
                    delta[o * na + a] = 1.0;
                }
                let next = stage(self.inst, t, mu_s, prev_sa, &delta, &mut soa, &mut sa);
                let v = acc + self.reward.table[t].iter().zip(&sa).map(|(r, m)| r * m).sum::<f64>();
                if t == self.reward.horizon() {
                    let better = match &self.best {
                        None => true,
                        Some((b, _)) => v > *b + 1e-12 * b.abs().max(1.0),
                    };
                    if better {
                        self.best = Some((v, self.choice.clone()));
                    }
                } else {
                    let sa_now = sa.clone();
                    self.go(t + 1, &next, Some(&sa_now), v);
                }
            }
        }
    }

    let mut search = Search { inst, reward, ns, na, no, choice: vec![vec![0; no]; horizon + 1], best: None };
    search.go(0, inst.initial_belief().probs(), None, 0.0);
    let (value, actions) = search.best.expect("at least one policy");
    Ok((MemorylessPolicy::deterministic(&actions, na)?, value))
}

#[cfg(test)]
mod tests;
