//! Cross-checks exported models against HiGHS when the `highspy` Python
//! package is importable; skipped otherwise.

use std::process::Command;

use smf_pomdp::benchmarks::bundled;
use smf_pomdp::bnb::{solve_milp, MilpParams};
use smf_pomdp::formulate::{build_memoryless_model, export_mps, ModelOptions, RewardSpec};
use smf_pomdp::lp::{solve_lp, LpParams};
use smf_pomdp::mdp::solve_mdp_default;

const SCRIPT: &str = r#"
import sys, highspy
for path in sys.argv[1:]:
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(path)
    h.run()
    print(h.getInfo().objective_function_value, h.getModelStatus())
"#;

fn highs_available() -> bool {
    Command::new("python3").args(["-c", "import highspy"]).output().is_ok_and(|o| o.status.success())
}

#[test]
fn exported_models_solve_to_the_same_value() {
    if !highs_available() {
        eprintln!("highspy not importable; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut ours = Vec::new();
    for name in ["tiger", "paint", "1d", "ejs1", "ejs2", "web-mall"] {
        let inst = bundled(name).unwrap().with_discount(0.95);
        let tail = solve_mdp_default(&inst).unwrap();
        for t in 1..=3 {
            for spec in [RewardSpec::plain(&inst, t), RewardSpec::tilde(&inst, t, &tail)] {
                for (cuts, integral) in [(false, false), (true, false), (false, true)] {
                    if integral && t > 2 {
                        continue;
                    }
                    let m = build_memoryless_model(&inst, &spec, ModelOptions { cuts, integral }).unwrap();
                    let value = if integral {
                        solve_milp(&inst, &m, &spec, &MilpParams::default()).unwrap().incumbent
                    } else {
                        solve_lp(&m.lp, &LpParams::default()).unwrap().objective
                    };
                    let path = dir.path().join(format!("{}.mps", files.len()));
                    std::fs::write(&path, export_mps(&m.lp).text).unwrap();
                    files.push(path);
                    ours.push((format!("{name} T={t} {:?} cuts={cuts} integral={integral}", spec.kind), value));
                }
            }
        }
    }
    let out = Command::new("python3").arg("-c").arg(SCRIPT).args(&files).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), ours.len());
    for ((label, value), line) in ours.iter().zip(lines) {
        let mut parts = line.split_whitespace();
        let theirs: f64 = parts.next().unwrap().parse().unwrap();
        assert_eq!(parts.next(), Some("HighsModelStatus.kOptimal"), "{label}");
        // Coefficients are written with 12 characters.
        assert!((theirs - value).abs() <= 1e-7 * value.abs().max(1.0), "{label}: ours {value}, HiGHS {theirs}");
    }
}
