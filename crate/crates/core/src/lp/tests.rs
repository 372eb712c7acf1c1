use super::*;
use proptest::prelude::*;

fn single(lower: f64, upper: f64, obj: f64) -> LpModel {
    let mut m = LpModel::default();
    m.add_column("x", lower, upper, obj);
    m
}

#[test]
fn bounded_maximum() {
    let mut m = single(0.0, f64::INFINITY, 1.0);
    m.add_row("cap", vec![(0, 1.0)], Sense::Le, 3.0);
    let s = solve_lp(&m, &LpParams::default()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.x[0] - 3.0).abs() < 1e-12);
    assert!((s.objective - 3.0).abs() < 1e-12);
}

#[test]
fn contradictory_rows_are_infeasible() {
    let mut m = single(f64::NEG_INFINITY, f64::INFINITY, 1.0);
    m.add_row("lo", vec![(0, 1.0)], Sense::Ge, 1.0);
    m.add_row("hi", vec![(0, 1.0)], Sense::Le, 0.0);
    assert_eq!(solve_lp(&m, &LpParams::default()).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn open_direction_is_unbounded() {
    let mut m = single(0.0, f64::INFINITY, 1.0);
    m.add_column("y", 0.0, f64::INFINITY, 0.0);
    m.add_row("diff", vec![(0, 1.0), (1, -1.0)], Sense::Le, 2.0);
    assert_eq!(solve_lp(&m, &LpParams::default()).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn empty_model() {
    let s = solve_lp(&LpModel::default(), &LpParams::default()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert_eq!(s.objective, 0.0);
}

#[test]
fn classic_production_problem() {
    // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
    let mut m = LpModel::default();
    m.add_column("x", 0.0, f64::INFINITY, 3.0);
    m.add_column("y", 0.0, f64::INFINITY, 5.0);
    m.add_row("a", vec![(0, 1.0)], Sense::Le, 4.0);
    m.add_row("b", vec![(1, 2.0)], Sense::Le, 12.0);
    m.add_row("c", vec![(0, 3.0), (1, 2.0)], Sense::Le, 18.0);
    let s = solve_lp(&m, &LpParams::default()).unwrap();
    assert!((s.objective - 36.0).abs() < 1e-9);
    assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
}

#[test]
fn equality_system_with_free_variable() {
    // max -z s.t. x + y = 1, z - x = 0.25, x,y ≥ 0, z free → x = 0, z = 0.25.
    let mut m = LpModel::default();
    m.add_column("x", 0.0, f64::INFINITY, 0.0);
    m.add_column("y", 0.0, f64::INFINITY, 0.0);
    m.add_column("z", f64::NEG_INFINITY, f64::INFINITY, -1.0);
    m.add_row("sum", vec![(0, 1.0), (1, 1.0)], Sense::Eq, 1.0);
    m.add_row("link", vec![(2, 1.0), (0, -1.0)], Sense::Eq, 0.25);
    let s = solve_lp(&m, &LpParams::default()).unwrap();
    assert!((s.objective + 0.25).abs() < 1e-12);
}

#[test]
fn warm_start_and_bound_overrides() {
    let mut m = LpModel::default();
    m.add_column("x", 0.0, 1.0, 1.0);
    m.add_column("y", 0.0, 1.0, 1.0);
    m.add_row("c", vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.5);
    let sess = LpSession::new(&m);
    let p = LpParams::default();
    let root = sess.solve(None, None, None, &p).unwrap();
    assert!((root.objective - 1.5).abs() < 1e-12);
    let fixed = sess.solve(None, Some(&[0.0, 1.0]), root.basis.as_ref(), &p).unwrap();
    assert!((fixed.objective - 1.0).abs() < 1e-12);
    // A basis of the wrong size is ignored.
    let bogus = Basis(vec![VarStatus::Basic; 2]);
    let again = sess.solve(None, None, Some(&bogus), &p).unwrap();
    assert!((again.objective - 1.5).abs() < 1e-12);
    let crossed = sess.solve(Some(&[1.0, 0.0]), Some(&[0.0, 1.0]), None, &p).unwrap();
    assert_eq!(crossed.status, LpStatus::Infeasible);
}

#[test]
fn iteration_limit_is_reported() {
    let mut m = LpModel::default();
    for j in 0..5 {
        m.add_column(format!("x{j}"), 0.0, f64::INFINITY, 1.0 + j as f64);
    }
    m.add_row("sum", (0..5).map(|j| (j, 1.0)).collect(), Sense::Le, 1.0);
    m.add_row("lo", (0..5).map(|j| (j, 1.0)).collect(), Sense::Ge, 0.5);
    let p = LpParams { max_iters: 0, ..LpParams::default() };
    assert_eq!(solve_lp(&m, &p).unwrap().status, LpStatus::IterationLimit);
}

/// Best vertex by enumerating every choice of `n` active constraints.
fn brute_force(model: &LpModel) -> Option<f64> {
    let n = model.num_columns();
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
    for (j, c) in model.columns.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cons.push((e.clone(), c.lower));
        cons.push((e, c.upper));
    }
    for r in &model.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &r.coefs {
            a[j] += v;
        }
        cons.push((a, r.rhs));
    }
    let k = cons.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let mut m: Vec<Vec<f64>> = idx.iter().map(|&i| {
            let mut row = cons[i].0.clone();
            row.push(cons[i].1);
            row
        }).collect();
        let mut ok = true;
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            if m[p][c].abs() < 1e-9 {
                ok = false;
                break;
            }
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for q in c..=n {
                        m[r][q] -= f * m[c][q];
                    }
                }
            }
        }
        if ok {
            let x: Vec<f64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();
            if model.max_violation(&x) <= 1e-7 {
                let v = model.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for q in i + 1..n {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

fn random_model() -> impl Strategy<Value = LpModel> {
    let coef = prop_oneof![Just(0i32), -3i32..=3i32].prop_map(|v| v as f64);
    (2usize..=3, 1usize..=4).prop_flat_map(move |(n, m)| {
        (
            proptest::collection::vec((0i32..=2, 1i32..=4, -4i32..=4), n),
            proptest::collection::vec((proptest::collection::vec(coef.clone(), n), 0usize..3, -4i32..=6), m),
        )
            .prop_map(|(cols, rows)| {
                let mut model = LpModel::default();
                for (j, (lo, width, obj)) in cols.into_iter().enumerate() {
                    model.add_column(format!("x{j}"), -(lo as f64), (width - lo) as f64, obj as f64);
                }
                for (i, (coefs, sense, rhs)) in rows.into_iter().enumerate() {
                    let sense = [Sense::Le, Sense::Ge, Sense::Eq][sense];
                    let coefs = coefs.into_iter().enumerate().filter(|e| e.1 != 0.0).collect();
                    model.add_row(format!("r{i}"), coefs, sense, rhs as f64);
                }
                model
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn agrees_with_vertex_enumeration(model in random_model()) {
        let s = solve_lp(&model, &LpParams::default()).unwrap();
        match brute_force(&model) {
            None => prop_assert_eq!(s.status, LpStatus::Infeasible),
            Some(v) => {
                prop_assert_eq!(s.status, LpStatus::Optimal);
                prop_assert!((s.objective - v).abs() < 1e-7, "{} vs {}", s.objective, v);
                prop_assert!(model.max_violation(&s.x) < 1e-8);
            }
        }
    }

    #[test]
    fn row_permutation_keeps_the_optimum(model in random_model(), seed in any::<u64>()) {
        let base = solve_lp(&model, &LpParams::default()).unwrap();
        let mut shuffled = model.clone();
        let k = shuffled.rows.len();
        for i in (1..k).rev() {
            let j = (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize;
            shuffled.rows.swap(i, j);
        }
        let other = solve_lp(&shuffled, &LpParams::default()).unwrap();
        prop_assert_eq!(base.status, other.status);
        if base.status == LpStatus::Optimal {
            prop_assert!((base.objective - other.objective).abs() <= 1e-8 * base.objective.abs().max(1.0));
        }
    }
}
