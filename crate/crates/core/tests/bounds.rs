mod common;

use proptest::prelude::*;
use smf_pomdp::bnb::{solve_milp, MilpParams, MilpStatus};
use smf_pomdp::formulate::{build_memoryless_model, ModelOptions, RewardSpec};
use smf_pomdp::lp::LpParams;
use smf_pomdp::mdp::{solve_mdp_default, solve_mdp_finite};
use smf_pomdp::model::PomdpInstance;
use smf_pomdp::policy::{enumerate_optimal, evaluate_exact, MemorylessPolicy};
use smf_pomdp::sim::relaxation_value;

const TOL: f64 = 1e-6;

fn relax(inst: &PomdpInstance, spec: &RewardSpec, cuts: bool) -> f64 {
    relaxation_value(inst, spec, cuts, &LpParams::default()).unwrap()
}

fn milp(inst: &PomdpInstance, spec: &RewardSpec, cuts: bool) -> f64 {
    let m = build_memoryless_model(inst, spec, ModelOptions { cuts, integral: true }).unwrap();
    let r = solve_milp(inst, &m, spec, &MilpParams::default()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    assert!(r.incumbent <= r.bound + TOL);
    r.incumbent
}

fn policy_from(inst: &PomdpInstance, horizon: usize, picks: &[usize]) -> MemorylessPolicy {
    let (na, no) = (inst.num_actions(), inst.num_observations());
    let mut it = picks.iter().cycle();
    let first = it.next().unwrap() % na;
    let mut actions = vec![vec![first; no]];
    for _ in 0..horizon {
        actions.push((0..no).map(|_| it.next().unwrap() % na).collect());
    }
    MemorylessPolicy::deterministic(&actions, na).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_of_bounds_holds(inst in common::instance(), t in 0usize..=2, picks in prop::collection::vec(0usize..6, 1..8)) {
        let spec = RewardSpec::plain(&inst, t);
        let any = evaluate_exact(&inst, &policy_from(&inst, t, &picks), &spec).unwrap().value;
        let w = milp(&inst, &spec, true);
        let v = common::history_value(&inst, &spec);
        let z_rc = relax(&inst, &spec, true);
        let z_r = relax(&inst, &spec, false);
        prop_assert!(any <= w + TOL, "policy {any} above w_ml {w}");
        prop_assert!(w <= v + TOL, "w_ml {w} above history value {v}");
        prop_assert!(v <= z_rc + TOL, "history value {v} above z_Rc {z_rc}");
        prop_assert!(z_rc <= z_r + TOL, "z_Rc {z_rc} above z_R {z_r}");
        let mdp = solve_mdp_finite(&inst, &spec.table).value;
        prop_assert!((z_r - mdp).abs() <= TOL, "z_R {z_r} vs MDP {mdp}");
    }

    #[test]
    fn branch_and_bound_matches_enumeration(inst in common::instance(), t in 0usize..=2, cuts in any::<bool>()) {
        let tail = solve_mdp_default(&inst).unwrap();
        for spec in [RewardSpec::plain(&inst, t), RewardSpec::tilde(&inst, t, &tail)] {
            let (_, best) = enumerate_optimal(&inst, &spec, 1 << 20).unwrap();
            let w = milp(&inst, &spec, cuts);
            prop_assert!((w - best).abs() <= TOL, "bnb {w} vs enumeration {best}");
        }
    }

    #[test]
    fn tilde_relaxations_are_flat_and_nonincreasing(inst in common::instance()) {
        let tail = solve_mdp_default(&inst).unwrap();
        let r0 = relax(&inst, &RewardSpec::tilde(&inst, 0, &tail), false);
        let mut prev = f64::INFINITY;
        for t in 0..=3 {
            let spec = RewardSpec::tilde(&inst, t, &tail);
            let r = relax(&inst, &spec, false);
            let rc = relax(&inst, &spec, true);
            prop_assert!((r - r0).abs() <= TOL, "z~_R^{t} {r} vs {r0}");
            prop_assert!(rc <= prev + TOL, "z~_Rc^{t} {rc} above previous {prev}");
            prev = rc;
        }
    }

    #[test]
    fn relabeling_preserves_values(inst in common::instance(), keys in prop::collection::vec(any::<u32>(), 9)) {
        let perm = |n: usize, k: &[u32]| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| (k[i], i));
            idx
        };
        let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
        let other = inst.permuted(&perm(ns, &keys[0..3]), &perm(na, &keys[3..6]), &perm(no, &keys[6..9]));
        let spec = RewardSpec::plain(&inst, 2);
        let spec2 = RewardSpec::plain(&other, 2);
        for cuts in [false, true] {
            let (a, b) = (relax(&inst, &spec, cuts), relax(&other, &spec2, cuts));
            prop_assert!((a - b).abs() <= TOL, "cuts={cuts}: {a} vs {b}");
        }
        let (a, b) = (milp(&inst, &spec, false), milp(&other, &spec2, false));
        prop_assert!((a - b).abs() <= TOL, "w_ml {a} vs {b}");
    }
}
