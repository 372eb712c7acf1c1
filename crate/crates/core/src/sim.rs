//! Seeded Monte Carlo evaluation and the bound and gap reports.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bnb::{solve_milp, BnbError, MilpParams, MilpStatus};
use crate::formulate::{build_memoryless_model, FormulateError, ModelOptions, RewardSpec};
use crate::lp::{solve_lp, LpError, LpParams, LpStatus};
use crate::mdp::MdpValue;
use crate::model::{belief_update, Belief, PomdpInstance};
use crate::policy::{MemorylessPolicy, PolicyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("controller failed in trajectory {trajectory} at step {step}: {source}")]
    Controller { trajectory: usize, step: usize, source: PolicyError },
    #[error("belief update failed in trajectory {trajectory} at step {step}: {message}")]
    Belief { trajectory: usize, step: usize, message: String },
    #[error("{metric} is undefined: zero denominator")]
    UndefinedMetric { metric: String },
    #[error(transparent)]
    Formulate(#[from] FormulateError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Bnb(#[from] BnbError),
    #[error("LP relaxation ended with status {0:?}")]
    LpStatus(LpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_sims: usize,
    pub steps: usize,
    pub seed: u64,
    /// Overrides the instance discount when set.
    pub discount: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_sims: 1000, steps: 100, seed: 0, discount: None }
    }
}

impl SimConfig {
    fn check(&self) -> Result<(), SimError> {
        if self.n_sims == 0 || self.steps == 0 {
            return Err(SimError::Config("n_sims and steps must be at least 1".into()));
        }
        if let Some(g) = self.discount {
            if !(0.0..=1.0).contains(&g) {
                return Err(SimError::Config(format!("discount {g} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Sample statistics. The wall-clock field is left out of the JSON form so
/// that identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema: &'static str,
    pub config: SimConfig,
    pub mean: f64,
    pub stderr: f64,
    /// `γ^H |r|_∞ / (1 − γ)`, the most the truncated tail can be worth.
    pub truncation_bias_bound: f64,
    pub cached_fraction: Option<f64>,
    pub non_optimal_solves: Option<usize>,
    #[serde(skip)]
    pub mean_action_time: Duration,
}

/// Independent stream for trajectory `k`.
pub fn trajectory_rng(seed: u64, k: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Index drawn from the distribution `p`.
pub fn sample_index<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Sum with `O(log n)` error growth and an order fixed by the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `controller` on `config.n_sims` independent trajectories.
pub fn simulate_controller<F>(inst: &PomdpInstance, controller: F, config: &SimConfig) -> Result<EvalReport, SimError>
where
    F: Fn(&Belief) -> Result<usize, PolicyError> + Sync,
{
    config.check()?;
    let g = config.discount.unwrap_or_else(|| inst.discount());
    let ns = inst.num_states();
    let run = |k: usize| -> Result<(f64, Duration), SimError> {
        let mut rng = trajectory_rng(config.seed, k);
        let mut belief = inst.initial_belief().clone();
        let mut s = sample_index(&mut rng, belief.probs());
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut spent = Duration::ZERO;
        for step in 0..config.steps {
            let clock = Instant::now();
            let a = controller(&belief).map_err(|source| SimError::Controller { trajectory: k, step, source })?;
            spent += clock.elapsed();
            total += weight * inst.reward(s, a);
            weight *= g;
            let next = sample_index(&mut rng, inst.transition_row(a, s));
            let o = sample_index(&mut rng, inst.emission_row(a, next));
            s = next;
            if step + 1 < config.steps {
                belief = belief_update(inst, &belief, a, o)
                    .map_err(|e| SimError::Belief { trajectory: k, step, message: e.to_string() })?;
            }
        }
        debug_assert!(s < ns);
        Ok((total, spent))
    };
    let results: Vec<(f64, Duration)> = (0..config.n_sims).into_par_iter().map(run).collect::<Result<_, _>>()?;
    let returns: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, stderr) = mean_stderr(&returns);
    let spent: Duration = results.iter().map(|r| r.1).sum();
    let rsup = inst.reward_sup();
    let truncation_bias_bound = if g < 1.0 { g.powi(config.steps as i32) * rsup / (1.0 - g) } else { f64::INFINITY };
    Ok(EvalReport {
        schema: "v1",
        config: *config,
        mean,
        stderr,
        truncation_bias_bound,
        cached_fraction: None,
        non_optimal_solves: None,
        mean_action_time: spent / (config.n_sims * config.steps) as u32,
    })
}

/// Monte Carlo value of a memoryless policy under the stage rewards of
/// `reward`: the trajectory runs for `T + 1` steps and collects `r_t(s_t, a_t)`.
pub fn simulate_memoryless(
    inst: &PomdpInstance,
    policy: &MemorylessPolicy,
    reward: &RewardSpec,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let na = inst.num_actions();
    let no = inst.num_observations();
    let returns: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k);
            let mut s = sample_index(&mut rng, inst.initial_belief().probs());
            let first_obs: Vec<f64> = (0..no).map(|o| inst.initial_emission(s, o)).collect();
            let mut o = sample_index(&mut rng, &first_obs);
            let mut total = 0.0;
            for t in 0..=policy.horizon {
                let a = sample_index(&mut rng, &policy.probs[t][o * na..(o + 1) * na]);
                total += reward.table[t][s * na + a];
                s = sample_index(&mut rng, inst.transition_row(a, s));
                o = sample_index(&mut rng, inst.emission_row(a, s));
            }
            total
        })
        .collect();
    mean_stderr(&returns)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub horizon: usize,
    /// Optimal memoryless value.
    pub w_ml: f64,
    pub w_ml_status: MilpStatus,
    /// MILP bound when the search stopped early.
    pub w_ml_bound: f64,
    /// Relative optimality gap of the MILP search.
    pub w_ml_gap: f64,
    #[serde(skip)]
    pub w_ml_time: Duration,
    /// Relaxation with cuts.
    pub z_rc: f64,
    /// Relaxation without cuts.
    pub z_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub schema: &'static str,
    pub rows: Vec<BoundRow>,
    pub t_ub: usize,
    /// Tilde relaxation with cuts at horizon `t_ub`.
    pub z_tilde_rc: f64,
    /// Tilde relaxation without cuts at horizon 0, i.e. the MDP value at `b`.
    pub z_tilde_r0: f64,
    /// Ordering violations beyond 1e-6.
    pub defects: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub milp: MilpParams,
    pub lp: LpParams,
    /// Cuts in the memoryless MILP (the optimum does not depend on them).
    pub milp_cuts: bool,
    /// Tilde rewards for the per-horizon rows instead of plain ones.
    pub tilde_rows: bool,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { milp: MilpParams::default(), lp: LpParams::default(), milp_cuts: false, tilde_rows: false }
    }
}

/// Optimal value of the LP relaxation of the memoryless model.
pub fn relaxation_value(inst: &PomdpInstance, spec: &RewardSpec, cuts: bool, lp: &LpParams) -> Result<f64, SimError> {
    let m = build_memoryless_model(inst, spec, ModelOptions { cuts, integral: false })?;
    let s = solve_lp(&m.lp, lp)?;
    match s.status {
        LpStatus::Optimal => Ok(s.objective),
        other => Err(SimError::LpStatus(other)),
    }
}

pub fn compute_bound_suite(
    inst: &PomdpInstance,
    horizons: &[usize],
    t_ub: usize,
    tail: &MdpValue,
    opts: &BoundOptions,
) -> Result<BoundsReport, SimError> {
    let tol = 1e-6;
    let mut defects = Vec::new();
    let mut rows = Vec::new();
    for &t in horizons {
        let spec = if opts.tilde_rows { RewardSpec::tilde(inst, t, tail) } else { RewardSpec::plain(inst, t) };
        let m = build_memoryless_model(inst, &spec, ModelOptions { cuts: opts.milp_cuts, integral: true })?;
        let r = solve_milp(inst, &m, &spec, &opts.milp)?;
        let z_rc = relaxation_value(inst, &spec, true, &opts.lp)?;
        let z_r = relaxation_value(inst, &spec, false, &opts.lp)?;
        if r.incumbent > z_rc + tol {
            defects.push(format!("T={t}: w_ml {} exceeds z_Rc {}", r.incumbent, z_rc));
        }
        if z_rc > z_r + tol {
            defects.push(format!("T={t}: z_Rc {} exceeds z_R {}", z_rc, z_r));
        }
        rows.push(BoundRow {
            horizon: t,
            w_ml: r.incumbent,
            w_ml_status: r.status,
            w_ml_bound: r.bound,
            w_ml_gap: r.gap,
            w_ml_time: r.wall_time,
            z_rc,
            z_r,
        });
    }
    let z_tilde_rc = relaxation_value(inst, &RewardSpec::tilde(inst, t_ub, tail), true, &opts.lp)?;
    let z_tilde_r0 = relaxation_value(inst, &RewardSpec::tilde(inst, 0, tail), false, &opts.lp)?;
    if z_tilde_rc > z_tilde_r0 + tol {
        defects.push(format!("z~_Rc^{t_ub} {z_tilde_rc} exceeds z~_R^0 {z_tilde_r0}"));
    }
    Ok(BoundsReport { schema: "v1", rows, t_ub, z_tilde_rc, z_tilde_r0, defects })
}

/// `(reference − value) / reference`.
pub fn relative_gap(metric: &str, reference: f64, value: f64) -> Result<f64, SimError> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(SimError::UndefinedMetric { metric: metric.to_string() });
    }
    Ok((reference - value) / reference)
}

/// A gap as a raw fraction and as a percentage rounded to one decimal;
/// both are `None` when the metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub raw: Option<f64>,
    pub percent: Option<f64>,
}

impl Gap {
    fn from(r: Result<f64, SimError>) -> Self {
        match r {
            Ok(v) => Gap { raw: Some(v), percent: Some((v * 1000.0).round() / 10.0) },
            Err(_) => Gap { raw: None, percent: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub schema: &'static str,
    /// `G(w_ml^T) = (z_Rc^T − w_ml^T) / z_Rc^T` per bound row.
    pub memoryless: Vec<(usize, Gap)>,
    /// `G_ub = (z̃_R^0 − z̃_Rc^{T_ub}) / z̃_R^0`.
    pub upper_bound: Gap,
    /// `G^{T_ub} = (z̃_Rc^{T_ub} − v) / z̃_Rc^{T_ub}` for each labelled controller value.
    pub controllers: Vec<(String, Gap)>,
}

pub fn compute_gaps(bounds: &BoundsReport, values: &[(String, f64)]) -> GapReport {
    GapReport {
        schema: "v1",
        memoryless: bounds.rows.iter().map(|r| (r.horizon, Gap::from(relative_gap("G(w_ml)", r.z_rc, r.w_ml)))).collect(),
        upper_bound: Gap::from(relative_gap("G_ub", bounds.z_tilde_r0, bounds.z_tilde_rc)),
        controllers: values
            .iter()
            .map(|(name, v)| (name.clone(), Gap::from(relative_gap("G", bounds.z_tilde_rc, *v))))
            .collect(),
    }
}
