use super::*;
use crate::benchmarks::bundled;
use crate::lp::{solve_lp, LpParams, LpStatus};
use crate::mdp::{solve_mdp_default, solve_mdp_finite};

fn opts(cuts: bool, integral: bool) -> ModelOptions {
    ModelOptions { cuts, integral }
}

#[test]
fn tiger_column_counts() {
    let tiger = bundled("tiger").unwrap();
    let (s, o, a) = (2, 2, 3);
    let plain = build_memoryless_model(&tiger, &RewardSpec::plain(&tiger, 1), opts(false, false)).unwrap();
    // Two stages of (μ_s, μ_sa, μ_soa, δ) plus μ_s^{T+1}.
    assert_eq!(plain.lp.num_columns(), 2 * (s + s * a + s * o * a + o * a) + s);
    assert_eq!(plain.lp.num_columns(), 54);
    for t in 1..=3 {
        let base = build_memoryless_model(&tiger, &RewardSpec::plain(&tiger, t), opts(false, false)).unwrap();
        let cut = build_memoryless_model(&tiger, &RewardSpec::plain(&tiger, t), opts(true, false)).unwrap();
        assert_eq!(cut.lp.num_columns() - base.lp.num_columns(), s * s * o * a * a * t);
    }
}

#[test]
fn columns_follow_the_index() {
    let paint = bundled("paint").unwrap();
    let m = build_memoryless_model(&paint, &RewardSpec::plain(&paint, 2), opts(true, true)).unwrap();
    let idx = &m.index;
    assert_eq!(m.lp.columns[idx.mu_cut(2, 1, 3, 2, 1, 0)].name, "mu_x[2,1,3,2,1,0]");
    assert_eq!(m.lp.columns[idx.delta(1, 1, 2)].name, "delta[1,1,2]");
    assert_eq!(m.lp.columns[idx.mu_s(3, 3)].name, "mu_s[3,3]");
    for (j, c) in m.lp.columns.iter().enumerate() {
        assert_eq!(c.integer, idx.is_delta(j), "{}", c.name);
        assert!(c.lower == 0.0);
        if c.integer {
            assert_eq!(c.upper, 1.0);
        }
    }
    for r in &m.lp.rows {
        assert!(r.coefs.iter().all(|&(j, _)| j < m.lp.num_columns()));
    }
}

#[test]
fn single_stage_relaxation_sees_the_state() {
    // Without integrality the first-step rule can split mass by state, so
    // the relaxation reaches Σ_s b(s) max_a r(s, a).
    let paint = bundled("paint").unwrap();
    let spec = RewardSpec::plain(&paint, 0);
    let m = build_memoryless_model(&paint, &spec, opts(false, false)).unwrap();
    let s = solve_lp(&m.lp, &LpParams::default()).unwrap();
    assert!((s.objective - solve_mdp_finite(&paint, &spec.table).value).abs() < 1e-9);
    assert!((s.objective - 0.75).abs() < 1e-9);
}

#[test]
fn tiger_relaxation_equals_mdp_backward_induction() {
    let tiger = bundled("tiger").unwrap();
    let v = solve_mdp_default(&tiger).unwrap();
    let spec = RewardSpec::tilde(&tiger, 2, &v);
    let m = build_memoryless_model(&tiger, &spec, opts(false, false)).unwrap();
    let s = solve_lp(&m.lp, &LpParams::default()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    let oracle = solve_mdp_finite(&tiger, &spec.table).value;
    assert!((s.objective - oracle).abs() < 1e-6, "{} vs {}", s.objective, oracle);
}

#[test]
fn zero_solution_is_not_a_moment_vector() {
    let tiger = bundled("tiger").unwrap().map_rewards(|_, _, _| 0.0);
    let m = build_memoryless_model(&tiger, &RewardSpec::plain(&tiger, 1), opts(false, false)).unwrap();
    let mom = extract_moments(&m, &vec![0.0; m.lp.num_columns()]).unwrap();
    assert!(mom.invariant_violation.is_some());
    assert!(matches!(extract_moments(&m, &[0.0; 3]), Err(FormulateError::MissingColumn { .. })));
}

#[test]
fn relaxation_is_fractional_and_breaks_the_product() {
    let tiger = bundled("tiger").unwrap();
    let v = solve_mdp_default(&tiger).unwrap();
    let m = build_memoryless_model(&tiger, &RewardSpec::tilde(&tiger, 2, &v), opts(false, false)).unwrap();
    let s = solve_lp(&m.lp, &LpParams::default()).unwrap();
    let mom = extract_moments(&m, &s.x).unwrap();
    let report = check_nlp_feasibility(&tiger, &mom, &mom.delta);
    assert!(!mom.deterministic || report.bilinear > 1e-6, "relaxation optimum satisfies the product");
    assert!(report.bilinear > 1e-6);
}

#[test]
fn cuts_never_raise_the_relaxation() {
    for name in ["tiger", "paint", "ejs1"] {
        let inst = bundled(name).unwrap();
        for t in 1..=2 {
            let spec = RewardSpec::plain(&inst, t);
            let a = solve_lp(&build_memoryless_model(&inst, &spec, opts(false, false)).unwrap().lp, &LpParams::default()).unwrap();
            let b = solve_lp(&build_memoryless_model(&inst, &spec, opts(true, false)).unwrap().lp, &LpParams::default()).unwrap();
            assert!(b.objective <= a.objective + 1e-9, "{name} T={t}");
        }
    }
}

#[test]
fn reward_shape_is_checked() {
    let tiger = bundled("tiger").unwrap();
    let bad = RewardSpec { kind: RewardKind::Plain, table: vec![vec![0.0; 5]] };
    assert!(matches!(build_memoryless_model(&tiger, &bad, ModelOptions::default()), Err(FormulateError::RewardShape { .. })));
}
