mod common;

use smf_pomdp::benchmarks::bundled;
use smf_pomdp::bnb::{solve_milp, MilpParams};
use smf_pomdp::formulate::{build_memoryless_model, ModelOptions, RewardSpec};
use smf_pomdp::lp::LpParams;
use smf_pomdp::mdp::solve_mdp_default;
use smf_pomdp::sim::relaxation_value;

/// w_ml <= v* <= z_Rc against the belief-tree optimum on the bundled files.
#[test]
fn history_value_sits_between_the_bounds() {
    for (name, tmax) in [("tiger", 4), ("paint", 3), ("1d", 3), ("ejs1", 3)] {
        let inst = bundled(name).unwrap();
        let tail = solve_mdp_default(&inst.with_discount(0.95)).unwrap();
        for t in 0..=tmax {
            let g = inst.with_discount(0.95);
            for (inst, spec) in [(&inst, RewardSpec::plain(&inst, t)), (&g, RewardSpec::tilde(&g, t, &tail))] {
                let v = common::history_value(inst, &spec);
                let z_rc = relaxation_value(inst, &spec, true, &LpParams::default()).unwrap();
                let m = build_memoryless_model(inst, &spec, ModelOptions { cuts: false, integral: true }).unwrap();
                let w = solve_milp(inst, &m, &spec, &MilpParams::default()).unwrap().incumbent;
                assert!(w <= v + 1e-7, "{name} T={t} {:?}: w_ml {w} > v {v}", spec.kind);
                assert!(v <= z_rc + 1e-7, "{name} T={t} {:?}: v {v} > z_Rc {z_rc}", spec.kind);
            }
        }
    }
}

// Listening twice and then opening is optimal for the undiscounted tiger;
// a memoryless policy cannot count the listens.
#[test]
fn tiger_history_value_by_hand() {
    let tiger = bundled("tiger").unwrap();
    let spec = RewardSpec::plain(&tiger, 0);
    assert!((common::history_value(&tiger, &spec) - (-1.0)).abs() < 1e-12);
    let spec = RewardSpec::plain(&tiger, 2);
    // Listen, listen, then open only if both growls agree:
    // p(agree) = 0.85^2 + 0.15^2 = 0.745, expected open reward given agreement
    // = (0.7225 * 10 - 0.0225 * 100) / 0.745, listen otherwise.
    let open = 0.7225 * 10.0 - 0.0225 * 100.0;
    let expected = -2.0 + open + (1.0 - 0.745) * (-1.0);
    assert!((common::history_value(&tiger, &spec) - expected).abs() < 1e-9);
}
