#![allow(dead_code)]

use proptest::prelude::*;
use smf_pomdp::formulate::RewardSpec;
use smf_pomdp::model::{belief_update, obs_given_action_belief, Belief, Emission, PomdpInstance};

const MAX: usize = 3;

fn normalize(weights: &[u8], fallback: usize) -> Vec<f64> {
    let total: u32 = weights.iter().map(|&w| w as u32).sum();
    if total == 0 {
        let mut row = vec![0.0; weights.len()];
        row[fallback % weights.len()] = 1.0;
        return row;
    }
    weights.iter().map(|&w| w as f64 / total as f64).collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Small random POMDP with integer weights, so exact zeros are common.
/// Emission is action dependent when the flag is set and `|A| > 1`.
pub fn instance() -> impl Strategy<Value = PomdpInstance> {
    (
        2..=MAX,
        1..=MAX,
        1..=MAX,
        prop::collection::vec(0u8..4, MAX * MAX * MAX),
        prop::collection::vec(0u8..4, MAX * MAX * MAX),
        prop::collection::vec(-4i8..=4, MAX * MAX),
        prop::collection::vec(0u8..4, MAX),
        any::<bool>(),
    )
        .prop_map(|(ns, na, no, tw, ew, rw, bw, per_action)| {
            let transition = (0..na)
                .map(|a| (0..ns).map(|s| normalize(&tw[(a * MAX + s) * MAX..][..ns], s)).collect())
                .collect();
            let slice = |a: usize| -> Vec<Vec<f64>> {
                (0..ns).map(|s| normalize(&ew[(a * MAX + s) * MAX..][..no], s + a)).collect()
            };
            let emission =
                if per_action { Emission::PerAction((0..na).map(slice).collect()) } else { Emission::Independent(slice(0)) };
            let reward = (0..ns).map(|s| (0..na).map(|a| rw[s * MAX + a] as f64 / 2.0).collect()).collect();
            let belief = Belief::new(normalize(&bw[..ns], 0)).unwrap();
            PomdpInstance::from_tables(
                names("s", ns),
                names("a", na),
                names("o", no),
                transition,
                emission,
                reward,
                0.9,
                Some(belief),
            )
            .unwrap()
        })
}

/// Optimal history-dependent value of the finite-horizon problem with a
/// blind first action, by expanding the belief tree.
pub fn history_value(inst: &PomdpInstance, reward: &RewardSpec) -> f64 {
    fn go(inst: &PomdpInstance, reward: &RewardSpec, t: usize, b: &Belief) -> f64 {
        let na = inst.num_actions();
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let mut q: f64 = b.probs().iter().enumerate().map(|(s, p)| p * reward.get(t, s, a, na)).sum();
            if t < reward.horizon() {
                for (o, po) in obs_given_action_belief(inst, b, a).into_iter().enumerate() {
                    if po > 1e-12 {
                        let next = belief_update(inst, b, a, o).unwrap();
                        q += po * go(inst, reward, t + 1, &next);
                    }
                }
            }
            best = best.max(q);
        }
        best
    }
    go(inst, reward, 0, inst.initial_belief())
}
