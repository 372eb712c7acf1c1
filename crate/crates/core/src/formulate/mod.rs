//! Moment formulations of the finite-horizon memoryless problem.
//!
//! Columns follow a fixed order: time-major, then the families
//! `μ_s, μ_sa, μ_soa, δ` and (for `t ≥ 1`, with cuts) `μ_{s'a'soa}`,
//! each in lexicographic index order, and finally `μ_s^{T+1}`.
//!
//! When the emission depends on the previous action, the product
//! `p(o|s) μ_s^t` is replaced by its action-aware counterpart
//! `q_so^t = Σ_{s',a'} p(o|s,a') p(s|s',a') μ_{s'a'}^{t-1}`, which reduces
//! to the former when all emission slices agree.

mod mps;

pub use mps::{export_mps, MpsExport};

use serde::Serialize;
use thiserror::Error;

pub use crate::lp::{Column, LpModel, Row, Sense};
use crate::mdp::MdpValue;
use crate::model::{conditional_state_given_obs, PomdpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RewardKind {
    Plain,
    Tilde,
}

/// Stage rewards `r_t(s, a)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// `table[t][s * |A| + a]`
    pub table: Vec<Vec<f64>>,
}

impl RewardSpec {
    /// Undiscounted finite-horizon rewards.
    pub fn plain(inst: &PomdpInstance, horizon: usize) -> Self {
        let base = base_table(inst);
        RewardSpec { kind: RewardKind::Plain, table: vec![base; horizon + 1] }
    }

    /// Discounted rewards with the MDP tail folded into the last stage.
    pub fn tilde(inst: &PomdpInstance, horizon: usize, tail: &MdpValue) -> Self {
        let (ns, na) = (inst.num_states(), inst.num_actions());
        let g = inst.discount();
        let base = base_table(inst);
        let mut table = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let gt = g.powi(t as i32);
            let mut row: Vec<f64> = base.iter().map(|r| gt * r).collect();
            if t == horizon {
                let gt1 = g.powi(t as i32 + 1);
                for s in 0..ns {
                    for a in 0..na {
                        let ev: f64 = inst.transition_row(a, s).iter().zip(&tail.values).map(|(p, v)| p * v).sum();
                        row[s * na + a] += gt1 * ev;
                    }
                }
            }
            table.push(row);
        }
        RewardSpec { kind: RewardKind::Tilde, table }
    }

    pub fn horizon(&self) -> usize {
        self.table.len() - 1
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize, na: usize) -> f64 {
        self.table[t][s * na + a]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RewardSpec { kind: self.kind, table: self.table.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect() }
    }
}

fn base_table(inst: &PomdpInstance) -> Vec<f64> {
    let na = inst.num_actions();
    (0..inst.num_states() * na).map(|k| inst.reward(k / na, k % na)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ModelOptions {
    pub cuts: bool,
    pub integral: bool,
}

/// Column positions of every moment and policy symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VariableIndex {
    pub horizon: usize,
    pub ns: usize,
    pub na: usize,
    pub no: usize,
    pub cuts: bool,
    /// First column of each stage `t = 0..=T`, then of `μ^{T+1}`.
    stage_start: Vec<usize>,
    pub num_columns: usize,
}

impl VariableIndex {
    fn new(horizon: usize, ns: usize, na: usize, no: usize, cuts: bool) -> Self {
        let mut stage_start = Vec::with_capacity(horizon + 2);
        let mut next = 0;
        for t in 0..=horizon {
            stage_start.push(next);
            next += ns + ns * na + ns * no * na + no * na;
            if cuts && t >= 1 {
                next += ns * na * ns * no * na;
            }
        }
        stage_start.push(next);
        VariableIndex { horizon, ns, na, no, cuts, stage_start, num_columns: next + ns }
    }

    #[inline]
    pub fn mu_s(&self, t: usize, s: usize) -> usize {
        self.stage_start[t] + s
    }

    #[inline]
    pub fn mu_sa(&self, t: usize, s: usize, a: usize) -> usize {
        self.stage_start[t] + self.ns + s * self.na + a
    }

    #[inline]
    pub fn mu_soa(&self, t: usize, s: usize, o: usize, a: usize) -> usize {
        self.stage_start[t] + self.ns * (1 + self.na) + (s * self.no + o) * self.na + a
    }

    #[inline]
    pub fn delta(&self, t: usize, o: usize, a: usize) -> usize {
        self.stage_start[t] + self.ns * (1 + self.na + self.no * self.na) + o * self.na + a
    }

    /// `μ^t_{s'a'soa}` for `1 ≤ t ≤ T`, present only with cuts.
    #[inline]
    pub fn mu_cut(&self, t: usize, sp: usize, ap: usize, s: usize, o: usize, a: usize) -> usize {
        debug_assert!(self.cuts && t >= 1);
        let (ns, na, no) = (self.ns, self.na, self.no);
        self.stage_start[t] + ns * (1 + na + no * na) + no * na + (((sp * na + ap) * ns + s) * no + o) * na + a
    }

    pub fn is_delta(&self, col: usize) -> bool {
        let (ns, na, no) = (self.ns, self.na, self.no);
        (0..=self.horizon).any(|t| {
            let lo = self.stage_start[t] + ns * (1 + na + no * na);
            (lo..lo + no * na).contains(&col)
        })
    }
}

/// A built formulation with its column map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemorylessModel {
    pub lp: LpModel,
    pub index: VariableIndex,
    pub options: ModelOptions,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulateError {
    #[error("reward table is {rows}x{cols}, the instance needs {expected} entries per stage")]
    RewardShape { rows: usize, cols: usize, expected: usize },
    #[error("solution has {got} values but the model has {expected} columns")]
    MissingColumn { got: usize, expected: usize },
}

/// Terms of `q_so^t`, the probability of being in `s` and seeing `o` at `t`.
fn emission_mass(inst: &PomdpInstance, idx: &VariableIndex, t: usize, s: usize, o: usize) -> Vec<(usize, f64)> {
    if t == 0 {
        return vec![(idx.mu_s(0, s), inst.initial_emission(s, o))];
    }
    if !inst.action_dependent_emission() {
        return vec![(idx.mu_s(t, s), inst.emission(0, s, o))];
    }
    let mut terms = Vec::new();
    for sp in 0..idx.ns {
        for ap in 0..idx.na {
            let w = inst.emission(ap, s, o) * inst.transition(ap, sp, s);
            if w != 0.0 {
                terms.push((idx.mu_sa(t - 1, sp, ap), w));
            }
        }
    }
    terms
}

pub fn build_memoryless_model(
    inst: &PomdpInstance,
    reward: &RewardSpec,
    options: ModelOptions,
) -> Result<MemorylessModel, FormulateError> {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    if let Some(bad) = reward.table.iter().find(|r| r.len() != ns * na) {
        return Err(FormulateError::RewardShape { rows: reward.table.len(), cols: bad.len(), expected: ns * na });
    }
    let horizon = reward.horizon();
    let idx = VariableIndex::new(horizon, ns, na, no, options.cuts);
    let mut lp = LpModel::default();
    let inf = f64::INFINITY;

    for t in 0..=horizon {
        for s in 0..ns {
            lp.add_column(format!("mu_s[{t},{s}]"), 0.0, inf, 0.0);
        }
        for s in 0..ns {
            for a in 0..na {
                lp.add_column(format!("mu_sa[{t},{s},{a}]"), 0.0, inf, reward.get(t, s, a, na));
            }
        }
        for s in 0..ns {
            for o in 0..no {
                for a in 0..na {
                    lp.add_column(format!("mu_soa[{t},{s},{o},{a}]"), 0.0, inf, 0.0);
                }
            }
        }
        for o in 0..no {
            for a in 0..na {
                let c = lp.add_column(format!("delta[{t},{o},{a}]"), 0.0, 1.0, 0.0);
                lp.columns[c].integer = options.integral;
            }
        }
        if options.cuts && t >= 1 {
            for sp in 0..ns {
                for ap in 0..na {
                    for s in 0..ns {
                        for o in 0..no {
                            for a in 0..na {
                                lp.add_column(format!("mu_x[{t},{sp},{ap},{s},{o},{a}]"), 0.0, inf, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    for s in 0..ns {
        lp.add_column(format!("mu_s[{},{s}]", horizon + 1), 0.0, inf, 0.0);
    }
    debug_assert_eq!(lp.num_columns(), idx.num_columns);

    let b = inst.initial_belief().probs();
    for s in 0..ns {
        lp.add_row(format!("init[{s}]"), vec![(idx.mu_s(0, s), 1.0)], Sense::Eq, b[s]);
    }
    for o in 1..no {
        for a in 0..na {
            lp.add_row(
                format!("blind[{o},{a}]"),
                vec![(idx.delta(0, o, a), 1.0), (idx.delta(0, 0, a), -1.0)],
                Sense::Eq,
                0.0,
            );
        }
    }
    let cond = options.cuts.then(|| conditional_state_given_obs(inst));
    for t in 0..=horizon {
        for s in 0..ns {
            let mut c = vec![(idx.mu_s(t, s), 1.0)];
            c.extend((0..na).map(|a| (idx.mu_sa(t, s, a), -1.0)));
            lp.add_row(format!("state[{t},{s}]"), c, Sense::Eq, 0.0);
        }
        for s in 0..ns {
            for a in 0..na {
                let mut c = vec![(idx.mu_sa(t, s, a), 1.0)];
                c.extend((0..no).map(|o| (idx.mu_soa(t, s, o, a), -1.0)));
                lp.add_row(format!("action[{t},{s},{a}]"), c, Sense::Eq, 0.0);
            }
        }
        for s in 0..ns {
            let mut c = vec![(idx.mu_s(t + 1, s), 1.0)];
            for sp in 0..ns {
                for ap in 0..na {
                    let p = inst.transition(ap, sp, s);
                    if p != 0.0 {
                        c.push((idx.mu_sa(t, sp, ap), -p));
                    }
                }
            }
            lp.add_row(format!("flow[{t},{s}]"), c, Sense::Eq, 0.0);
        }
        for o in 0..no {
            lp.add_row(format!("simplex[{t},{o}]"), (0..na).map(|a| (idx.delta(t, o, a), 1.0)).collect(), Sense::Eq, 1.0);
        }
        for s in 0..ns {
            for o in 0..no {
                let q = emission_mass(inst, &idx, t, s, o);
                let neg_q: Vec<(usize, f64)> = q.iter().map(|&(j, v)| (j, -v)).collect();
                for a in 0..na {
                    let x = idx.mu_soa(t, s, o, a);
                    let d = idx.delta(t, o, a);
                    let mut upper_q = vec![(x, 1.0)];
                    upper_q.extend_from_slice(&neg_q);
                    lp.add_row(format!("mc_q[{t},{s},{o},{a}]"), upper_q, Sense::Le, 0.0);
                    lp.add_row(format!("mc_d[{t},{s},{o},{a}]"), vec![(x, 1.0), (d, -1.0)], Sense::Le, 0.0);
                    let mut lower = vec![(x, 1.0), (d, -1.0)];
                    lower.extend_from_slice(&neg_q);
                    lp.add_row(format!("mc_l[{t},{s},{o},{a}]"), lower, Sense::Ge, -1.0);
                }
            }
        }
        if let (Some(cond), true) = (&cond, t >= 1) {
            for s in 0..ns {
                for o in 0..no {
                    for a in 0..na {
                        let mut c = vec![(idx.mu_soa(t, s, o, a), -1.0)];
                        for sp in 0..ns {
                            for ap in 0..na {
                                c.push((idx.mu_cut(t, sp, ap, s, o, a), 1.0));
                            }
                        }
                        lp.add_row(format!("cut_a[{t},{s},{o},{a}]"), c, Sense::Eq, 0.0);
                    }
                }
            }
            for sp in 0..ns {
                for ap in 0..na {
                    for s in 0..ns {
                        for o in 0..no {
                            let w = inst.emission(ap, s, o) * inst.transition(ap, sp, s);
                            let mut c: Vec<(usize, f64)> = (0..na).map(|a| (idx.mu_cut(t, sp, ap, s, o, a), 1.0)).collect();
                            if w != 0.0 {
                                c.push((idx.mu_sa(t - 1, sp, ap), -w));
                            }
                            lp.add_row(format!("cut_b[{t},{sp},{ap},{s},{o}]"), c, Sense::Eq, 0.0);
                        }
                    }
                }
            }
            for sp in 0..ns {
                for ap in 0..na {
                    for o in 0..no {
                        if cond.is_masked(ap, sp, o) {
                            continue;
                        }
                        for s in 0..ns {
                            let p = cond.prob(ap, sp, o, s);
                            for a in 0..na {
                                let mut c = vec![(idx.mu_cut(t, sp, ap, s, o, a), 1.0)];
                                for sb in 0..ns {
                                    let coef = if sb == s { 1.0 - p } else { -p };
                                    if sb == s {
                                        c[0].1 = coef;
                                    } else if coef != 0.0 {
                                        c.push((idx.mu_cut(t, sp, ap, sb, o, a), coef));
                                    }
                                }
                                lp.add_row(format!("cut_c[{t},{sp},{ap},{s},{o},{a}]"), c, Sense::Eq, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(MemorylessModel { lp, index: idx, options })
}

/// Moment vector and policy read off a model solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSolution {
    pub horizon: usize,
    /// `mu_s[t][s]`, `t = 0..=T+1`.
    pub mu_s: Vec<Vec<f64>>,
    /// `mu_sa[t][s * |A| + a]`.
    pub mu_sa: Vec<Vec<f64>>,
    /// `mu_soa[t][(s * |O| + o) * |A| + a]`.
    pub mu_soa: Vec<Vec<f64>>,
    /// `mu_cut[t - 1][(((s' |A| + a') |S| + s) |O| + o) |A| + a]` for `t = 1..=T`.
    pub mu_cut: Option<Vec<Vec<f64>>>,
    /// `delta[t][o * |A| + a]`.
    pub delta: Vec<Vec<f64>>,
    pub deterministic: bool,
    /// Set when the values break the moment invariants (negative mass or
    /// initial mass different from one).
    pub invariant_violation: Option<String>,
}

impl MomentSolution {
    fn check_invariants(&mut self) {
        let min = self
            .mu_s
            .iter()
            .chain(&self.mu_sa)
            .chain(&self.mu_soa)
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(*v));
        let total: f64 = self.mu_s[0].iter().sum();
        self.invariant_violation = if min < -1e-9 {
            Some(format!("negative moment {min:e}"))
        } else if (total - 1.0).abs() > 1e-9 {
            Some(format!("initial mass {total} is not one"))
        } else {
            None
        };
    }

    /// Column vector for `model`; cut columns are filled only if present here.
    pub fn to_columns(&self, idx: &VariableIndex) -> Vec<f64> {
        let (ns, na, no) = (idx.ns, idx.na, idx.no);
        let mut x = vec![0.0; idx.num_columns];
        for t in 0..=idx.horizon + 1 {
            for s in 0..ns {
                x[idx.mu_s(t, s)] = self.mu_s[t][s];
            }
        }
        for t in 0..=idx.horizon {
            for s in 0..ns {
                for a in 0..na {
                    x[idx.mu_sa(t, s, a)] = self.mu_sa[t][s * na + a];
                    for o in 0..no {
                        x[idx.mu_soa(t, s, o, a)] = self.mu_soa[t][(s * no + o) * na + a];
                    }
                }
            }
            for o in 0..no {
                for a in 0..na {
                    x[idx.delta(t, o, a)] = self.delta[t][o * na + a];
                }
            }
        }
        if let (true, Some(cut)) = (idx.cuts, &self.mu_cut) {
            for t in 1..=idx.horizon {
                for sp in 0..ns {
                    for ap in 0..na {
                        for s in 0..ns {
                            for o in 0..no {
                                for a in 0..na {
                                    let k = (((sp * na + ap) * ns + s) * no + o) * na + a;
                                    x[idx.mu_cut(t, sp, ap, s, o, a)] = cut[t - 1][k];
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

pub fn extract_moments(model: &MemorylessModel, x: &[f64]) -> Result<MomentSolution, FormulateError> {
    let idx = &model.index;
    if x.len() < idx.num_columns {
        return Err(FormulateError::MissingColumn { got: x.len(), expected: idx.num_columns });
    }
    let (ns, na, no, horizon) = (idx.ns, idx.na, idx.no, idx.horizon);
    let mu_s = (0..=horizon + 1).map(|t| (0..ns).map(|s| x[idx.mu_s(t, s)]).collect()).collect();
    let mu_sa =
        (0..=horizon).map(|t| (0..ns * na).map(|k| x[idx.mu_sa(t, k / na, k % na)]).collect()).collect();
    let mu_soa = (0..=horizon)
        .map(|t| (0..ns * no * na).map(|k| x[idx.mu_soa(t, k / (no * na), (k / na) % no, k % na)]).collect())
        .collect();
    let mut delta: Vec<Vec<f64>> =
        (0..=horizon).map(|t| (0..no * na).map(|k| x[idx.delta(t, k / na, k % na)]).collect()).collect();
    let mu_cut = idx.cuts.then(|| {
        (1..=horizon)
            .map(|t| {
                let mut v = Vec::with_capacity(ns * na * ns * no * na);
                for sp in 0..ns {
                    for ap in 0..na {
                        for s in 0..ns {
                            for o in 0..no {
                                for a in 0..na {
                                    v.push(x[idx.mu_cut(t, sp, ap, s, o, a)]);
                                }
                            }
                        }
                    }
                }
                v
            })
            .collect()
    });
    let deterministic = delta.iter().flatten().all(|d| d.abs() <= 1e-6 || (d - 1.0).abs() <= 1e-6);
    if deterministic {
        delta.iter_mut().flatten().for_each(|d| *d = d.round());
    }
    let mut out = MomentSolution { horizon, mu_s, mu_sa, mu_soa, mu_cut, delta, deterministic, invariant_violation: None };
    out.check_invariants();
    Ok(out)
}

/// Largest residual of each constraint family of the bilinear program.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NlpResidualReport {
    pub initial: f64,
    pub blind_first_step: f64,
    pub state_marginal: f64,
    pub action_marginal: f64,
    pub flow: f64,
    pub bilinear: f64,
    pub simplex: f64,
    pub nonnegativity: f64,
}

impl NlpResidualReport {
    pub fn max(&self) -> f64 {
        [
            self.initial,
            self.blind_first_step,
            self.state_marginal,
            self.action_marginal,
            self.flow,
            self.bilinear,
            self.simplex,
            self.nonnegativity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates every constraint of the bilinear program at `(moments, delta)`,
/// where `delta[t][o * |A| + a]` is the policy.
pub fn check_nlp_feasibility(inst: &PomdpInstance, moments: &MomentSolution, delta: &[Vec<f64>]) -> NlpResidualReport {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let horizon = moments.horizon;
    let mut r = NlpResidualReport::default();
    let up = |slot: &mut f64, v: f64| *slot = slot.max(v.abs());
    let b = inst.initial_belief().probs();
    for s in 0..ns {
        up(&mut r.initial, moments.mu_s[0][s] - b[s]);
    }
    for o in 1..no {
        for a in 0..na {
            up(&mut r.blind_first_step, delta[0][o * na + a] - delta[0][a]);
        }
    }
    for t in 0..=horizon {
        let mu_prev = |sp: usize, ap: usize| moments.mu_sa[t - 1][sp * na + ap];
        for s in 0..ns {
            let sum: f64 = (0..na).map(|a| moments.mu_sa[t][s * na + a]).sum();
            up(&mut r.state_marginal, moments.mu_s[t][s] - sum);
            let inflow: f64 =
                (0..ns).flat_map(|sp| (0..na).map(move |ap| (sp, ap))).map(|(sp, ap)| inst.transition(ap, sp, s) * moments.mu_sa[t][sp * na + ap]).sum();
            up(&mut r.flow, moments.mu_s[t + 1][s] - inflow);
            for o in 0..no {
                let q = if t == 0 {
                    inst.initial_emission(s, o) * moments.mu_s[0][s]
                } else if !inst.action_dependent_emission() {
                    inst.emission(0, s, o) * moments.mu_s[t][s]
                } else {
                    (0..ns)
                        .flat_map(|sp| (0..na).map(move |ap| (sp, ap)))
                        .map(|(sp, ap)| inst.emission(ap, s, o) * inst.transition(ap, sp, s) * mu_prev(sp, ap))
                        .sum()
                };
                for a in 0..na {
                    up(&mut r.bilinear, moments.mu_soa[t][(s * no + o) * na + a] - delta[t][o * na + a] * q);
                }
            }
            for a in 0..na {
                let sum: f64 = (0..no).map(|o| moments.mu_soa[t][(s * no + o) * na + a]).sum();
                up(&mut r.action_marginal, moments.mu_sa[t][s * na + a] - sum);
            }
        }
        for o in 0..no {
            let sum: f64 = (0..na).map(|a| delta[t][o * na + a]).sum();
            up(&mut r.simplex, sum - 1.0);
        }
    }
    let min = moments
        .mu_s
        .iter()
        .chain(&moments.mu_sa)
        .chain(&moments.mu_soa)
        .chain(delta)
        .flatten()
        .fold(0.0f64, |m, v| m.min(*v));
    r.nonnegativity = -min;
    r
}

#[cfg(test)]
mod tests;
