use std::collections::HashMap;

use smf_pomdp::benchmarks::bundled;
use smf_pomdp::mdp::solve_mdp_default;
use smf_pomdp::model::{belief_update, obs_given_action_belief, Belief, PomdpInstance};
use smf_pomdp::policy::{SmfController, SmfOptions};
use smf_pomdp::sim::{simulate_controller, SimConfig};

/// Expected discounted return of a belief-feedback controller over `steps`
/// steps, by expanding the reachable belief chain.
fn chain_value(
    inst: &PomdpInstance,
    act: &dyn Fn(&Belief) -> usize,
    b: &Belief,
    steps: usize,
    memo: &mut HashMap<(Vec<i64>, usize), f64>,
) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    let key = (b.probs().iter().map(|p| (p * 1e12).round() as i64).collect(), steps);
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let a = act(b);
    let mut v: f64 = b.probs().iter().enumerate().map(|(s, p)| p * inst.reward(s, a)).sum();
    if steps > 1 {
        for (o, po) in obs_given_action_belief(inst, b, a).into_iter().enumerate() {
            if po > 1e-15 {
                let next = belief_update(inst, b, a, o).unwrap();
                v += inst.discount() * po * chain_value(inst, act, &next, steps - 1, memo);
            }
        }
    }
    memo.insert(key, v);
    v
}

#[test]
fn smf_on_tiger_matches_the_belief_chain() {
    let tiger = bundled("tiger").unwrap();
    let tail = solve_mdp_default(&tiger).unwrap();
    for rolling in [0, 1, 2] {
        let ctl = SmfController::new(&tiger, &tail, SmfOptions { rolling, ..SmfOptions::default() });
        let act = |b: &Belief| ctl.action(b).unwrap();
        let exact = chain_value(&tiger, &act, tiger.initial_belief(), 40, &mut HashMap::new());
        let config = SimConfig { n_sims: 20_000, steps: 40, seed: 5, discount: None };
        let r = simulate_controller(&tiger, |b| ctl.action(b), &config).unwrap();
        assert!(
            (r.mean - exact).abs() <= 4.0 * r.stderr,
            "T_r={rolling}: sampled {} ± {} vs exact {exact}",
            r.mean,
            r.stderr
        );
    }
}

// With T_r = 0 the controller is the blind one-step lookahead
// max_a Σ_s b(s) (r(s,a) + γ Σ_s' p(s'|s,a) v_MDP(s')).
#[test]
fn zero_lookahead_is_greedy_on_the_mdp_tail() {
    let paint = bundled("paint").unwrap();
    let tail = solve_mdp_default(&paint).unwrap();
    let ctl = SmfController::new(&paint, &tail, SmfOptions { rolling: 0, ..SmfOptions::default() });
    let (ns, na) = (paint.num_states(), paint.num_actions());
    for weights in [vec![1.0, 0.0, 0.0, 0.0], vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4], vec![0.0, 0.0, 0.5, 0.5]] {
        let b = Belief::from_weights(&weights).unwrap();
        let q: Vec<f64> = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|s| {
                        let ev: f64 = paint.transition_row(a, s).iter().zip(&tail.values).map(|(p, v)| p * v).sum();
                        b.probs()[s] * (paint.reward(s, a) + paint.discount() * ev)
                    })
                    .sum()
            })
            .collect();
        let (got, proven) = ctl.q_values(&b).unwrap();
        assert!(proven);
        for a in 0..na {
            assert!((got[a] - q[a]).abs() < 1e-7, "{weights:?} a={a}: {} vs {}", got[a], q[a]);
        }
    }
}
