//! Command implementations behind the `smf` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use smf_pomdp::benchmarks::{self, Source};
use smf_pomdp::bnb::{solve_milp, MilpParams, MilpStatus};
use smf_pomdp::formulate::{build_memoryless_model, export_mps, extract_moments, ModelOptions, RewardKind, RewardSpec};
use smf_pomdp::lp::{solve_lp, LpParams, LpStatus};
use smf_pomdp::mdp::solve_mdp_default;
use smf_pomdp::model::{sparsity, PomdpInstance};
use smf_pomdp::policy::{PolicyJson, SmfController, SmfOptions};
use smf_pomdp::sim::{compute_bound_suite, compute_gaps, relaxation_value, simulate_controller, BoundOptions, Gap, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "smf", version, about = "Memoryless-policy bounds and SMF control for finite POMDPs")]
pub struct Cli {
    /// Raise log verbosity (-v progress, -vv solver detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Download cache directory (default: $POMDP_CACHE_DIR or ~/.cache/smf-pomdp).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print |S| |O| |A| and sparsity.
    Info(InfoArgs),
    /// Solve the memoryless MILP (or its relaxation).
    SolveMl(SolveArgs),
    /// Bound chain and gap report.
    Bounds(BoundsArgs),
    /// Simulate the SMF controller.
    Smf(SmfArgs),
    /// Write the memoryless model as fixed-format MPS.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Instance file or benchmark name.
    pub instance: String,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelFlags {
    /// Instance file or benchmark name.
    pub instance: String,
    #[arg(long, default_value_t = 2)]
    pub horizon: usize,
    /// Add the conditional-independence cuts.
    #[arg(long, overrides_with = "no_cuts")]
    pub cuts: bool,
    #[arg(long, overrides_with = "cuts")]
    pub no_cuts: bool,
    /// Discounted rewards with the MDP tail in the last stage.
    #[arg(long)]
    pub tilde: bool,
    /// Override the discount factor.
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl ModelFlags {
    fn cuts_or(&self, default: bool) -> bool {
        if self.cuts {
            true
        } else if self.no_cuts {
            false
        } else {
            default
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct LimitFlags {
    /// Wall-clock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
    #[arg(long)]
    pub node_limit: Option<usize>,
}

impl LimitFlags {
    fn validate(&self) -> Result<()> {
        if let Some(t) = self.time_limit {
            if !(t >= 0.0 && t.is_finite()) {
                bail!("--time-limit must be a nonnegative number of seconds");
            }
        }
        if !(self.gap_tol >= 0.0) {
            bail!("--gap-tol must be nonnegative");
        }
        Ok(())
    }

    fn params(&self) -> MilpParams {
        MilpParams {
            gap_tol: self.gap_tol,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            node_limit: self.node_limit,
            log_every: Some(100),
            lp: LpParams::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Solve the LP relaxation only.
    #[arg(long, conflicts_with = "integral")]
    pub relax: bool,
    /// Binary policy columns (the default unless --relax).
    #[arg(long)]
    pub integral: bool,
    #[command(flatten)]
    pub limits: LimitFlags,
    /// Where to write the policy JSON.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Instance file or benchmark name.
    pub instance: String,
    /// Memoryless horizons, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
    pub horizon: Vec<usize>,
    /// Horizon of the tilde upper bound.
    #[arg(long)]
    pub tub: Option<usize>,
    /// Cuts in the memoryless MILP searches.
    #[arg(long)]
    pub cuts: bool,
    /// Tilde rewards for the per-horizon rows.
    #[arg(long)]
    pub tilde: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub limits: LimitFlags,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmfArgs {
    /// Instance file or benchmark name.
    pub instance: String,
    /// Rolling horizon of the controller.
    #[arg(long)]
    pub rolling: Option<usize>,
    /// Horizon of the tilde upper bound used for G.
    #[arg(long)]
    pub tub: Option<usize>,
    #[arg(long)]
    pub sims: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Cuts in the controller's MILPs.
    #[arg(long, overrides_with = "no_cuts")]
    pub cuts: bool,
    #[arg(long, overrides_with = "cuts")]
    pub no_cuts: bool,
    #[command(flatten)]
    pub limits: LimitFlags,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Drop integrality markers.
    #[arg(long)]
    pub relax: bool,
    /// Output MPS path; a `.json` name map is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 200 simulations and an upper-bound horizon of 20.
    Desk,
}

/// Protocol defaults, optionally shrunk by a preset; explicit flags win.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Protocol {
    pub sims: usize,
    pub steps: usize,
    pub t_ub: usize,
    pub rolling: usize,
}

impl Protocol {
    pub fn new(preset: Option<Preset>) -> Self {
        let full = Protocol { sims: 1000, steps: 100, t_ub: 100, rolling: 2 };
        match preset {
            None => full,
            Some(Preset::Desk) => Protocol { sims: 200, t_ub: 20, ..full },
        }
    }
}

fn load(spec: &str, cache_dir: Option<&Path>, gamma: Option<f64>) -> Result<(PomdpInstance, Source)> {
    let (inst, source) = benchmarks::load(spec, cache_dir).with_context(|| format!("loading {spec}"))?;
    let inst = match gamma {
        Some(g) => {
            if !(0.0..=1.0).contains(&g) {
                bail!("--gamma must lie in [0, 1]");
            }
            inst.with_discount(g)
        }
        None => inst,
    };
    Ok((inst, source))
}

fn source_label(s: &Source) -> String {
    match s {
        Source::File(p) => format!("file:{}", p.display()),
        Source::Cache(p) => format!("cache:{}", p.display()),
        Source::Bundled(p) => format!("bundled:{p:?}").to_lowercase(),
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(p) = path {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn rewards_for(inst: &PomdpInstance, horizon: usize, tilde: bool) -> Result<RewardSpec> {
    if tilde {
        if inst.discount() >= 1.0 {
            bail!("--tilde needs a discount below 1 (use --gamma)");
        }
        Ok(RewardSpec::tilde(inst, horizon, &solve_mdp_default(inst)?))
    } else {
        Ok(RewardSpec::plain(inst, horizon))
    }
}

#[derive(Debug, Serialize)]
pub struct InfoReport {
    pub schema: &'static str,
    pub instance: String,
    pub source: String,
    pub states: usize,
    pub observations: usize,
    pub actions: usize,
    pub sparsity_percent: f64,
    pub discount: f64,
    pub action_dependent_emission: bool,
}

pub fn cmd_info(args: &InfoArgs, cache_dir: Option<&Path>) -> Result<InfoReport> {
    let (inst, source) = load(&args.instance, cache_dir, None)?;
    let r = InfoReport {
        schema: "v1",
        instance: args.instance.clone(),
        source: source_label(&source),
        states: inst.num_states(),
        observations: inst.num_observations(),
        actions: inst.num_actions(),
        sparsity_percent: 100.0 * sparsity(&inst),
        discount: inst.discount(),
        action_dependent_emission: inst.action_dependent_emission(),
    };
    println!("{} {} {} {:.1}", r.states, r.observations, r.actions, r.sparsity_percent);
    write_json(args.json.as_deref(), &r)?;
    Ok(r)
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub schema: &'static str,
    pub instance: String,
    pub horizon: usize,
    pub rewards: RewardKind,
    pub cuts: bool,
    pub relaxed: bool,
    /// LP status when relaxed, MILP status otherwise.
    pub status: String,
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: Option<usize>,
    pub wall_time_seconds: f64,
    pub policy: Option<PolicyJson>,
    pub invariant_violation: Option<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn cmd_solve_ml(args: &SolveArgs, cache_dir: Option<&Path>) -> Result<SolveReport> {
    args.limits.validate()?;
    let (inst, _) = load(&args.model.instance, cache_dir, args.model.gamma)?;
    let spec = rewards_for(&inst, args.model.horizon, args.model.tilde)?;
    let cuts = args.model.cuts_or(args.relax);
    let model = build_memoryless_model(&inst, &spec, ModelOptions { cuts, integral: !args.relax })?;
    let clock = Instant::now();
    let base = SolveReport {
        schema: "v1",
        instance: args.model.instance.clone(),
        horizon: args.model.horizon,
        rewards: spec.kind,
        cuts,
        relaxed: args.relax,
        status: String::new(),
        objective: None,
        bound: None,
        gap: None,
        nodes: None,
        wall_time_seconds: 0.0,
        policy: None,
        invariant_violation: None,
    };
    let report = if args.relax {
        let mut lp = LpParams::default();
        lp.deadline = args.limits.time_limit.map(|t| clock + Duration::from_secs_f64(t));
        let s = solve_lp(&model.lp, &lp)?;
        let violation = if s.status == LpStatus::Optimal {
            extract_moments(&model, &s.x)?.invariant_violation
        } else {
            None
        };
        SolveReport {
            status: format!("{:?}", s.status),
            objective: finite(s.objective),
            bound: finite(s.objective),
            wall_time_seconds: clock.elapsed().as_secs_f64(),
            invariant_violation: violation,
            ..base
        }
    } else {
        let r = solve_milp(&inst, &model, &spec, &args.limits.params())?;
        SolveReport {
            status: format!("{:?}", r.status),
            objective: finite(r.incumbent),
            bound: finite(r.bound),
            gap: finite(r.gap),
            nodes: Some(r.nodes),
            wall_time_seconds: r.wall_time.as_secs_f64(),
            policy: r.policy.as_ref().map(|p| p.to_json()),
            ..base
        }
    };
    match report.objective {
        Some(v) => println!("status={} objective={v:.9} bound={}", report.status, report.bound.unwrap_or(f64::NAN)),
        None => println!("status={}", report.status),
    }
    if let (Some(path), Some(p)) = (args.policy_out.as_deref(), &report.policy) {
        write_json(Some(path), p)?;
    }
    write_json(args.json.as_deref(), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct BoundsOutput {
    pub schema: &'static str,
    pub instance: String,
    pub discount: f64,
    pub bounds: smf_pomdp::sim::BoundsReport,
    pub gaps: smf_pomdp::sim::GapReport,
}

fn pct(g: &Gap) -> String {
    g.percent.map_or_else(|| "undef".to_string(), |p| format!("{p:.1}"))
}

pub fn cmd_bounds(args: &BoundsArgs, cache_dir: Option<&Path>) -> Result<BoundsOutput> {
    args.limits.validate()?;
    let proto = Protocol::new(args.preset);
    let t_ub = args.tub.unwrap_or(proto.t_ub);
    let (inst, _) = load(&args.instance, cache_dir, args.gamma)?;
    if inst.discount() >= 1.0 {
        bail!("the tilde bounds need a discount below 1 (use --gamma)");
    }
    let tail = solve_mdp_default(&inst)?;
    let opts = BoundOptions {
        milp: args.limits.params(),
        lp: LpParams::default(),
        milp_cuts: args.cuts,
        tilde_rows: args.tilde,
    };
    let bounds = compute_bound_suite(&inst, &args.horizon, t_ub, &tail, &opts)?;
    let gaps = compute_gaps(&bounds, &[]);
    println!("{:<12} {:>3} {:>10} {:>9} {:>12} {:>12} {:>12} {:>9}", "instance", "T", "opt.gap%", "time(s)", "w_ml", "z_Rc", "z_R", "G(w_ml)%");
    for (row, (_, g)) in bounds.rows.iter().zip(&gaps.memoryless) {
        let status = if row.w_ml_status == MilpStatus::Optimal { "Opt.".to_string() } else { format!("{:.1}", 100.0 * row.w_ml_gap) };
        println!(
            "{:<12} {:>3} {:>10} {:>9.2} {:>12.6} {:>12.6} {:>12.6} {:>9}",
            args.instance,
            row.horizon,
            status,
            row.w_ml_time.as_secs_f64(),
            row.w_ml,
            row.z_rc,
            row.z_r,
            pct(g)
        );
    }
    println!("z~_Rc^{t_ub} = {:.6}  z~_R^0 = {:.6}  G_ub^{t_ub}% = {}", bounds.z_tilde_rc, bounds.z_tilde_r0, pct(&gaps.upper_bound));
    for d in &bounds.defects {
        log::error!("ordering defect: {d}");
    }
    let out = BoundsOutput { schema: "v1", instance: args.instance.clone(), discount: inst.discount(), bounds, gaps };
    write_json(args.json.as_deref(), &out)?;
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["instance", "T", "opt_gap_percent", "time_s", "w_ml", "z_rc", "z_r", "G_w_ml_percent", "G_ub_percent"])?;
        for (row, (_, g)) in out.bounds.rows.iter().zip(&out.gaps.memoryless) {
            w.write_record([
                out.instance.clone(),
                row.horizon.to_string(),
                if row.w_ml_status == MilpStatus::Optimal { "Opt.".into() } else { format!("{:.1}", 100.0 * row.w_ml_gap) },
                format!("{:.3}", row.w_ml_time.as_secs_f64()),
                row.w_ml.to_string(),
                row.z_rc.to_string(),
                row.z_r.to_string(),
                pct(g),
                pct(&out.gaps.upper_bound),
            ])?;
        }
        w.flush()?;
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct SmfOutput {
    pub schema: &'static str,
    pub instance: String,
    pub discount: f64,
    pub protocol: Protocol,
    pub cuts: bool,
    pub eval: smf_pomdp::sim::EvalReport,
    pub decisions: u64,
    pub distinct_beliefs: usize,
    /// Tilde relaxation with cuts at the upper-bound horizon.
    pub z_tilde_rc: f64,
    pub gap: Gap,
}

pub fn cmd_smf(args: &SmfArgs, cache_dir: Option<&Path>) -> Result<(SmfOutput, Duration)> {
    args.limits.validate()?;
    let base = Protocol::new(args.preset);
    let proto = Protocol {
        sims: args.sims.unwrap_or(base.sims),
        steps: args.steps.unwrap_or(base.steps),
        t_ub: args.tub.unwrap_or(base.t_ub),
        rolling: args.rolling.unwrap_or(base.rolling),
    };
    if proto.sims == 0 || proto.steps == 0 {
        bail!("--sims and --steps must be at least 1");
    }
    let (inst, _) = load(&args.instance, cache_dir, args.gamma)?;
    if inst.discount() >= 1.0 {
        bail!("the SMF controller needs a discount below 1 (use --gamma)");
    }
    let tail = solve_mdp_default(&inst)?;
    let cuts = if args.cuts { true } else { !args.no_cuts };
    let ctrl = SmfController::new(&inst, &tail, SmfOptions { rolling: proto.rolling, cuts, milp: args.limits.params() });
    let cfg = SimConfig { n_sims: proto.sims, steps: proto.steps, seed: args.seed, discount: None };
    let mut eval = simulate_controller(&inst, |b| ctrl.action(b), &cfg)?;
    let stats = ctrl.stats();
    eval.cached_fraction = Some(stats.cached_fraction());
    eval.non_optimal_solves = Some(stats.non_optimal_solves);
    let z_tilde_rc = relaxation_value(&inst, &RewardSpec::tilde(&inst, proto.t_ub, &tail), true, &LpParams::default())?;
    let gap = smf_pomdp::sim::relative_gap("G", z_tilde_rc, eval.mean)
        .map_or(Gap { raw: None, percent: None }, |v| Gap { raw: Some(v), percent: Some((v * 1000.0).round() / 10.0) });
    let time = eval.mean_action_time;
    println!("{:<12} {:>3} {:>10} {:>10} {:>12} {:>8}", "instance", "T_r", "mean", "stderr", "time/act(s)", "G%");
    println!(
        "{:<12} {:>3} {:>10.4} {:>10.4} {:>12.6} {:>8}",
        args.instance,
        proto.rolling,
        eval.mean,
        eval.stderr,
        time.as_secs_f64(),
        pct(&gap)
    );
    let out = SmfOutput {
        schema: "v1",
        instance: args.instance.clone(),
        discount: inst.discount(),
        protocol: proto,
        cuts,
        eval,
        decisions: stats.decisions,
        distinct_beliefs: stats.distinct_beliefs,
        z_tilde_rc,
        gap,
    };
    write_json(args.json.as_deref(), &out)?;
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["instance", "rolling", "G_percent", "time_s", "mean", "stderr", "z_tilde_rc"])?;
        w.write_record([
            out.instance.clone(),
            proto.rolling.to_string(),
            pct(&out.gap),
            format!("{:.6}", time.as_secs_f64()),
            out.eval.mean.to_string(),
            out.eval.stderr.to_string(),
            out.z_tilde_rc.to_string(),
        ])?;
        w.flush()?;
    }
    Ok((out, time))
}

#[derive(Debug, Serialize)]
pub struct ExportReport {
    pub schema: &'static str,
    pub instance: String,
    pub horizon: usize,
    pub integral: bool,
    pub rows: usize,
    pub columns: usize,
    pub mps: PathBuf,
    pub names: PathBuf,
}

pub fn cmd_export(args: &ExportArgs, cache_dir: Option<&Path>) -> Result<ExportReport> {
    let (inst, _) = load(&args.model.instance, cache_dir, args.model.gamma)?;
    let spec = rewards_for(&inst, args.model.horizon, args.model.tilde)?;
    let model = build_memoryless_model(&inst, &spec, ModelOptions { cuts: args.model.cuts_or(false), integral: !args.relax })?;
    let e = export_mps(&model.lp);
    fs::write(&args.out, &e.text).with_context(|| format!("writing {}", args.out.display()))?;
    let side = args.out.with_extension("json");
    fs::write(&side, e.sidecar_json()).with_context(|| format!("writing {}", side.display()))?;
    println!("{}", args.out.display());
    let report = ExportReport {
        schema: "v1",
        instance: args.model.instance.clone(),
        horizon: args.model.horizon,
        integral: !args.relax,
        rows: model.lp.num_rows(),
        columns: model.lp.num_columns(),
        mps: args.out.clone(),
        names: side,
    };
    write_json(args.json.as_deref(), &report)?;
    Ok(report)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let cache = cli.cache_dir.as_deref();
    let ok = match &cli.command {
        Command::Info(a) => cmd_info(a, cache).map(|_| true)?,
        Command::SolveMl(a) => cmd_solve_ml(a, cache)?.invariant_violation.is_none(),
        Command::Bounds(a) => cmd_bounds(a, cache)?.bounds.defects.is_empty(),
        Command::Smf(a) => cmd_smf(a, cache).map(|_| true)?,
        Command::Export(a) => cmd_export(a, cache).map(|_| true)?,
    };
    Ok(if ok { 0 } else { 1 })
}
