use super::*;
use crate::benchmarks::bundled;
use crate::bnb::{solve_milp, MilpParams};
use crate::formulate::{build_memoryless_model, check_nlp_feasibility, ModelOptions};
use crate::mdp::solve_mdp_default;
use crate::model::Belief;
use crate::sim::simulate_memoryless;

fn tiger_tilde(t: usize) -> (PomdpInstance, RewardSpec) {
    let tiger = bundled("tiger").unwrap();
    let spec = RewardSpec::tilde(&tiger, t, &solve_mdp_default(&tiger).unwrap());
    (tiger, spec)
}

#[test]
fn forced_policy_propagates_the_single_action() {
    let single = crate::model::tests::singleton();
    let p = MemorylessPolicy::deterministic(&vec![vec![0]; 4], 1).unwrap();
    let e = evaluate_exact(&single, &p, &RewardSpec::plain(&single, 3)).unwrap();
    assert_eq!(e.value, 4.0);
}

#[test]
fn zero_rewards_give_zero_value() {
    let tiger = bundled("tiger").unwrap().map_rewards(|_, _, _| 0.0);
    let spec = RewardSpec::plain(&tiger, 2);
    let p = MemorylessPolicy::deterministic(&[vec![2, 2], vec![0, 1], vec![1, 0]], 3).unwrap();
    assert_eq!(evaluate_exact(&tiger, &p, &spec).unwrap().value, 0.0);
}

#[test]
fn horizon_must_match() {
    let tiger = bundled("tiger").unwrap();
    let p = MemorylessPolicy::deterministic(&[vec![0, 0]], 3).unwrap();
    assert_eq!(
        evaluate_exact(&tiger, &p, &RewardSpec::plain(&tiger, 2)),
        Err(PolicyError::HorizonMismatch { policy: 0, reward: 2 })
    );
}

#[test]
fn invalid_policies_are_rejected() {
    assert!(MemorylessPolicy::deterministic(&[vec![0, 1]], 2).is_err(), "first stage must be blind");
    assert!(MemorylessPolicy::from_probs(vec![vec![0.5, 0.6]], 1, 2).is_err());
    let mixed = MemorylessPolicy::from_probs(vec![vec![0.25, 0.75]], 1, 2).unwrap();
    assert!(!mixed.deterministic);
    assert_eq!(mixed.action(0, 0), None);
}

#[test]
fn json_round_trip() {
    let p = MemorylessPolicy::deterministic(&[vec![2, 2], vec![0, 1]], 3).unwrap();
    let j = serde_json::to_string(&p.to_json()).unwrap();
    assert_eq!(j, r#"{"schema":"v1","horizon":1,"actions":[[2,2],[0,1]],"deterministic":true}"#);
    let back: PolicyJson = serde_json::from_str(&j).unwrap();
    assert_eq!(MemorylessPolicy::from_json(&back, 3).unwrap(), p);
    let mixed = MemorylessPolicy::from_probs(vec![vec![0.5, 0.5, 0.5, 0.5], vec![1.0, 0.0, 0.25, 0.75]], 2, 2).unwrap();
    let back: PolicyJson = serde_json::from_str(&serde_json::to_string(&mixed.to_json()).unwrap()).unwrap();
    assert_eq!(MemorylessPolicy::from_json(&back, 2).unwrap(), mixed);
}

#[test]
fn exact_value_matches_monte_carlo() {
    let (tiger, spec) = tiger_tilde(2);
    // A fixed draw standing in for a uniformly random deterministic policy.
    let p = MemorylessPolicy::deterministic(&[vec![0, 0], vec![2, 0], vec![1, 2]], 3).unwrap();
    let exact = evaluate_exact(&tiger, &p, &spec).unwrap().value;
    let (mean, se) = simulate_memoryless(&tiger, &p, &spec, 1_000_000, 17);
    assert!((mean - exact).abs() <= 4.0 * se, "{mean} ± {se} vs {exact}");
}

#[test]
fn evaluated_moments_are_nlp_feasible_and_satisfy_the_cuts() {
    for name in ["tiger", "paint", "ejs1", "1d"] {
        let inst = bundled(name).unwrap();
        let spec = RewardSpec::plain(&inst, 2);
        let model = build_memoryless_model(&inst, &spec, ModelOptions { cuts: true, integral: false }).unwrap();
        let (na, no) = (inst.num_actions(), inst.num_observations());
        for k in 0..5usize {
            let actions: Vec<Vec<usize>> = (0..=2)
                .map(|t| (0..no).map(|o| if t == 0 { k % na } else { (k * 7 + t * 3 + o * 5) % na }).collect())
                .collect();
            let p = MemorylessPolicy::deterministic(&actions, na).unwrap();
            let mut e = evaluate_exact(&inst, &p, &spec).unwrap();
            assert!(check_nlp_feasibility(&inst, &e.moments, &p.probs).max() <= 1e-12, "{name}");
            fill_cut_moments(&inst, &mut e.moments);
            let x = e.moments.to_columns(&model.index);
            assert!(model.lp.max_violation(&x) <= 1e-9, "{name}: {}", model.lp.max_violation(&x));
            assert!((model.lp.objective_value(&x) - e.value).abs() <= 1e-9);
        }
    }
}

#[test]
fn blind_horizon_zero_enumeration() {
    let paint = bundled("paint").unwrap();
    let (p, v) = enumerate_optimal(&paint, &RewardSpec::plain(&paint, 0), 10).unwrap();
    let b = paint.initial_belief().probs();
    let best = (0..4).map(|a| (0..4).map(|s| b[s] * paint.reward(s, a)).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(v, best);
    assert_eq!(p.horizon, 0);
}

#[test]
fn guard_reports_the_exact_count() {
    let paint = bundled("paint").unwrap();
    assert_eq!(count_deterministic(4, 2, 2), 1024);
    assert_eq!(
        enumerate_optimal(&paint, &RewardSpec::plain(&paint, 2), 1023).unwrap_err(),
        PolicyError::SearchSpaceExceedsGuard { count: 1024, guard: 1023 }
    );
}

#[test]
fn enumeration_agrees_with_evaluate_exact_and_bnb() {
    for (name, t) in [("tiger", 1), ("paint", 2)] {
        let inst = bundled(name).unwrap();
        let spec = RewardSpec::plain(&inst, t);
        let (p, v) = enumerate_optimal(&inst, &spec, 10_000).unwrap();
        assert!((evaluate_exact(&inst, &p, &spec).unwrap().value - v).abs() < 1e-12);
        let m = build_memoryless_model(&inst, &spec, ModelOptions { cuts: false, integral: true }).unwrap();
        let r = solve_milp(&inst, &m, &spec, &MilpParams::default()).unwrap();
        assert!((r.incumbent - v).abs() < 1e-6, "{name}: {} vs {v}", r.incumbent);
    }
}

#[test]
fn enumeration_ties_go_to_the_smallest_table() {
    let tiger = bundled("tiger").unwrap().map_rewards(|_, _, _| 0.0);
    let (p, _) = enumerate_optimal(&tiger, &RewardSpec::plain(&tiger, 2), 10_000).unwrap();
    assert!(p.probs.iter().all(|row| (0..2).all(|o| row[o * 3] == 1.0)));
}

fn smf(t: usize) -> SmfController {
    let tiger = bundled("tiger").unwrap();
    let tail = solve_mdp_default(&tiger).unwrap();
    SmfController::new(&tiger, &tail, SmfOptions { rolling: t, ..SmfOptions::default() })
}

/// First action of the best policy found by enumeration from `b`.
fn enumerated_action(b: Belief, t: usize) -> usize {
    let (tiger, _) = tiger_tilde(t);
    let tiger = tiger.with_initial_belief(b).unwrap();
    let spec = RewardSpec::tilde(&tiger, t, &solve_mdp_default(&tiger).unwrap());
    enumerate_optimal(&tiger, &spec, 100_000).unwrap().0.action(0, 0).unwrap()
}

#[test]
fn smf_listens_when_uncertain() {
    let c = smf(2);
    let b = Belief::uniform(2);
    let a = c.action(&b).unwrap();
    assert_eq!(c.instance().actions()[a], "listen");
    assert_eq!(a, enumerated_action(b, 2));
}

#[test]
fn smf_opens_the_safe_door_when_sure() {
    let c = smf(2);
    let left = c.instance().state_index("tiger-left").unwrap();
    let mut probs = vec![1e-4; 2];
    probs[left] = 1.0 - 1e-4;
    let b = Belief::new(probs).unwrap();
    let a = c.action(&b).unwrap();
    assert_eq!(c.instance().actions()[a], "open-right");
    assert_eq!(a, enumerated_action(b, 2));
}

#[test]
fn smf_cache_counts_distinct_beliefs() {
    let c = smf(1);
    let b = Belief::uniform(2);
    let near = Belief::new(vec![0.5 + 1e-8, 0.5 - 1e-8]).unwrap();
    c.action(&b).unwrap();
    c.action(&near).unwrap();
    c.action(&b).unwrap();
    let s = c.stats();
    assert_eq!((s.decisions, s.distinct_beliefs, s.non_optimal_solves), (3, 1, 0));
    assert!((s.cached_fraction() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn smf_action_survives_reward_scaling() {
    let tiger = bundled("tiger").unwrap();
    let doubled = tiger.map_rewards(|_, _, r| 2.0 * r);
    for (inst, probs) in [(&tiger, [0.5, 0.5]), (&tiger, [0.9, 0.1]), (&tiger, [0.03, 0.97])] {
        let b = Belief::new(probs.to_vec()).unwrap();
        let a = SmfController::new(inst, &solve_mdp_default(inst).unwrap(), SmfOptions::default()).action(&b).unwrap();
        let a2 = SmfController::new(&doubled, &solve_mdp_default(&doubled).unwrap(), SmfOptions::default()).action(&b).unwrap();
        assert_eq!(a, a2, "{probs:?}");
    }
}

#[test]
fn single_action_needs_no_solve() {
    let single = crate::model::tests::singleton();
    let c = SmfController::new(&single, &solve_mdp_default(&single).unwrap(), SmfOptions::default());
    assert_eq!(c.action(&Belief::uniform(1)).unwrap(), 0);
    assert_eq!(c.stats().distinct_beliefs, 0);
}
