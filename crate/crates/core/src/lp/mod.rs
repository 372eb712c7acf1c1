//! Bounded-variable revised primal simplex.
//!
//! Every row gets a logical variable `y_i = a_i x` whose bounds encode the
//! row sense, so the working system is `A x - y = 0` with bounds on all
//! `n + m` variables. Phase 1 minimizes the sum of bound violations of the
//! basic variables; phase 2 maximizes the model objective.

mod lu;

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use lu::{Factor, SparseCol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub coefs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A maximization problem over bounded columns and linear rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LpModel {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl LpModel {
    pub fn add_column(&mut self, name: impl Into<String>, lower: f64, upper: f64, objective: f64) -> usize {
        self.columns.push(Column { name: name.into(), lower, upper, integer: false, objective });
        self.columns.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coefs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { name: name.into(), coefs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.columns.iter().zip(x).map(|(c, v)| c.objective * v).sum()
    }

    /// Largest violation of any row or column bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (c, v) in self.columns.iter().zip(x) {
            worst = worst.max(c.lower - v).max(v - c.upper);
        }
        for r in &self.rows {
            let lhs: f64 = r.coefs.iter().map(|&(j, a)| a * x[j]).sum();
            let d = lhs - r.rhs;
            worst = worst.max(match r.sense {
                Sense::Eq => d.abs(),
                Sense::Le => d,
                Sense::Ge => -d,
            });
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpParams {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iters: usize,
    pub deadline: Option<Instant>,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    pub refactor_every: usize,
}

impl Default for LpParams {
    fn default() -> Self {
        LpParams {
            tol_feas: 1e-9,
            tol_opt: 1e-9,
            max_iters: 1_000_000,
            deadline: None,
            bland_after: 1000,
            refactor_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Zero,
}

/// Status of all `n + m` variables (columns first, then logicals).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis(pub Vec<VarStatus>);

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("bound vector has length {got}, expected {expected}")]
    BoundLength { got: usize, expected: usize },
}

/// Solves `model` from scratch, ignoring integrality.
pub fn solve_lp(model: &LpModel, params: &LpParams) -> Result<LpSolution, LpError> {
    LpSession::new(model).solve(None, None, None, params)
}

/// Reusable solver state for one model; bounds can be overridden per call,
/// which is how branch-and-bound nodes are solved.
pub struct LpSession {
    n: usize,
    m: usize,
    /// Column-major structural matrix.
    cols: Vec<SparseCol>,
    /// Row-major structural matrix, used for pricing.
    rows: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
    col_lower: Vec<f64>,
    col_upper: Vec<f64>,
}

/// Relative size of the bound perturbation used against stalling.
const PERTURBATION: f64 = 1e-6;
/// Consecutive degenerate pivots before the bounds are perturbed.
const PERTURB_AFTER: usize = 50;

struct State<'a> {
    sess: &'a LpSession,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Minimization costs for phase 2 (negated objective).
    cost: Vec<f64>,
    x: Vec<f64>,
    status: Vec<VarStatus>,
    basis: Vec<usize>,
    factor: Factor,
    params: LpParams,
    /// Original bounds while the working bounds are perturbed.
    saved_bounds: Option<(Vec<f64>, Vec<f64>)>,
    perturbed_once: bool,
}

impl LpSession {
    pub fn new(model: &LpModel) -> Self {
        let n = model.num_columns();
        let m = model.num_rows();
        let mut cols: Vec<SparseCol> = vec![Vec::new(); n];
        let mut rows = Vec::with_capacity(m);
        let mut row_lower = Vec::with_capacity(m);
        let mut row_upper = Vec::with_capacity(m);
        for (i, r) in model.rows.iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = r.coefs.clone();
            merged.sort_by_key(|e| e.0);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(merged.len());
            for (j, a) in merged {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += a,
                    _ => row.push((j, a)),
                }
            }
            row.retain(|e| e.1 != 0.0);
            for &(j, a) in &row {
                cols[j].push((i, a));
            }
            rows.push(row);
            let (lo, hi) = match r.sense {
                Sense::Eq => (r.rhs, r.rhs),
                Sense::Le => (f64::NEG_INFINITY, r.rhs),
                Sense::Ge => (r.rhs, f64::INFINITY),
            };
            row_lower.push(lo);
            row_upper.push(hi);
        }
        LpSession {
            n,
            m,
            cols,
            rows,
            cost: model.columns.iter().map(|c| -c.objective).collect(),
            row_lower,
            row_upper,
            col_lower: model.columns.iter().map(|c| c.lower).collect(),
            col_upper: model.columns.iter().map(|c| c.upper).collect(),
        }
    }

    pub fn num_columns(&self) -> usize {
        self.n
    }

    pub fn column_bounds(&self) -> (&[f64], &[f64]) {
        (&self.col_lower, &self.col_upper)
    }

    fn column(&self, j: usize) -> SparseCol {
        if j < self.n {
            self.cols[j].clone()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    /// Solves with optional column-bound overrides and warm-start basis.
    pub fn solve(
        &self,
        lower: Option<&[f64]>,
        upper: Option<&[f64]>,
        warm: Option<&Basis>,
        params: &LpParams,
    ) -> Result<LpSolution, LpError> {
        let (n, m) = (self.n, self.m);
        let mut lo = lower.unwrap_or(&self.col_lower).to_vec();
        let mut hi = upper.unwrap_or(&self.col_upper).to_vec();
        for v in [&lo, &hi] {
            if v.len() != n {
                return Err(LpError::BoundLength { got: v.len(), expected: n });
            }
        }
        if lo.iter().zip(&hi).any(|(l, u)| l > u) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations: 0,
                basis: None,
            });
        }
        lo.extend_from_slice(&self.row_lower);
        hi.extend_from_slice(&self.row_upper);
        let mut cost = self.cost.clone();
        cost.resize(n + m, 0.0);

        let valid_warm = warm.filter(|b| {
            b.0.len() == n + m && b.0.iter().filter(|s| **s == VarStatus::Basic).count() == m
        });
        let status: Vec<VarStatus> = match valid_warm {
            Some(b) => b.0.clone(),
            None => {
                let mut s = vec![VarStatus::AtLower; n + m];
                for v in s.iter_mut().skip(n) {
                    *v = VarStatus::Basic;
                }
                s
            }
        };
        let basis: Vec<usize> = (0..n + m).filter(|&j| status[j] == VarStatus::Basic).collect();
        let mut cols: Vec<SparseCol> = basis.iter().map(|&j| self.column(j)).collect();
        let (factor, _) = Factor::new(m, &mut cols);
        let mut st = State {
            sess: self,
            lower: lo,
            upper: hi,
            cost,
            x: vec![0.0; n + m],
            status,
            basis,
            factor,
            params: *params,
            saved_bounds: None,
            perturbed_once: false,
        };
        st.refactor();
        st.run()
    }
}

impl State<'_> {
    fn place_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lower[j], self.upper[j]);
        let s = match self.status[j] {
            VarStatus::AtUpper if u.is_finite() => VarStatus::AtUpper,
            _ if l.is_finite() => VarStatus::AtLower,
            _ if u.is_finite() => VarStatus::AtUpper,
            _ => VarStatus::Zero,
        };
        self.status[j] = s;
        self.x[j] = match s {
            VarStatus::AtLower => l,
            VarStatus::AtUpper => u,
            _ => 0.0,
        };
    }

    /// Refactorizes the current basis, repairing singularity with
    /// logicals, and recomputes the basic values.
    fn refactor(&mut self) {
        let n = self.sess.n;
        let mut cols: Vec<SparseCol> = self.basis.iter().map(|&j| self.sess.column(j)).collect();
        let (factor, repair) = Factor::new(self.sess.m, &mut cols);
        self.factor = factor;
        for (pos, row) in repair.replaced {
            let out = self.basis[pos];
            self.status[out] = VarStatus::AtLower;
            let logical = n + row;
            self.basis[pos] = logical;
            self.status[logical] = VarStatus::Basic;
        }
        for j in 0..self.x.len() {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        self.recompute_basic();
    }

    fn recompute_basic(&mut self) {
        let (n, m) = (self.sess.n, self.sess.m);
        let mut rhs = vec![0.0; m];
        for j in 0..n {
            if self.status[j] != VarStatus::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.sess.cols[j] {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            if self.status[n + i] != VarStatus::Basic {
                rhs[i] += self.x[n + i];
            }
        }
        let mut z = vec![0.0; m];
        self.factor.ftran_dense(&rhs, &mut z);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = z[pos];
        }
    }

    /// Widens every non-fixed finite bound by a small pseudo-random amount
    /// so that degenerate vertices split apart.
    fn perturb(&mut self) {
        let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
        let mut next = || {
            h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = h;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            0.5 + 0.5 * ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        };
        self.saved_bounds = Some((self.lower.clone(), self.upper.clone()));
        self.perturbed_once = true;
        for j in 0..self.lower.len() {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l == u {
                continue;
            }
            if l.is_finite() {
                self.lower[j] = l - PERTURBATION * (1.0 + l.abs()) * next();
            }
            if u.is_finite() {
                self.upper[j] = u + PERTURBATION * (1.0 + u.abs()) * next();
            }
        }
        for j in 0..self.x.len() {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        self.recompute_basic();
    }

    /// Puts the original bounds back; returns false if none were saved.
    fn unperturb(&mut self) -> bool {
        let Some((l, u)) = self.saved_bounds.take() else {
            return false;
        };
        self.lower = l;
        self.upper = u;
        self.refactor();
        true
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        (self.lower[j] - v).max(v - self.upper[j]).max(0.0)
    }

    fn run(&mut self) -> Result<LpSolution, LpError> {
        let (n, m) = (self.sess.n, self.sess.m);
        let nt = n + m;
        let tol_p = self.params.tol_feas;
        let tol_d = self.params.tol_opt;
        let mut iterations = 0usize;
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let mut cb = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut d = vec![0.0; nt];
        let mut alpha = vec![0.0; m];
        let mut retried_final = false;

        loop {
            if iterations >= self.params.max_iters {
                return Ok(self.finish(LpStatus::IterationLimit, iterations));
            }
            if iterations % 64 == 0 {
                if let Some(dl) = self.params.deadline {
                    if Instant::now() >= dl {
                        return Ok(self.finish(LpStatus::TimeLimit, iterations));
                    }
                }
            }
            if since_refactor >= self.params.refactor_every {
                self.refactor();
                since_refactor = 0;
            }
            if degenerate >= PERTURB_AFTER && !self.perturbed_once {
                self.perturb();
                degenerate = 0;
            }

            let mut phase1 = false;
            for (pos, &j) in self.basis.iter().enumerate() {
                let v = self.x[j];
                cb[pos] = if v < self.lower[j] - tol_p {
                    phase1 = true;
                    -1.0
                } else if v > self.upper[j] + tol_p {
                    phase1 = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !phase1 {
                for (pos, &j) in self.basis.iter().enumerate() {
                    cb[pos] = self.cost[j];
                }
            }
            self.factor.btran(&mut cb, &mut y);

            // Reduced costs of the structurals via the row-major copy.
            for j in 0..n {
                d[j] = if phase1 { 0.0 } else { self.cost[j] };
            }
            for (i, row) in self.sess.rows.iter().enumerate() {
                let yi = y[i];
                if yi != 0.0 {
                    for &(j, a) in row {
                        d[j] -= a * yi;
                    }
                }
            }
            for i in 0..m {
                d[n + i] = if phase1 { 0.0 } else { self.cost[n + i] } + y[i];
            }

            if iterations % 1000 == 0 && log::log_enabled!(log::Level::Trace) {
                let inf: f64 = (0..nt).map(|j| self.infeasibility(j)).sum();
                let obj: f64 = -(0..n).map(|j| self.cost[j] * self.x[j]).sum::<f64>();
                log::trace!("simplex it={iterations} phase1={phase1} infeasibility={inf:e} objective={obj}");
            }
            let bland = degenerate >= self.params.bland_after;
            let mut enter = usize::MAX;
            let mut best = 0.0;
            for j in 0..nt {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let dj = d[j];
                let score = match st {
                    VarStatus::AtLower if dj < -tol_d => -dj,
                    VarStatus::AtUpper if dj > tol_d => dj,
                    VarStatus::Zero if dj.abs() > tol_d => dj.abs(),
                    _ => continue,
                };
                if bland {
                    enter = j;
                    break;
                }
                if score > best {
                    best = score;
                    enter = j;
                }
            }

            if enter == usize::MAX {
                // Confirm on a fresh factorization before declaring a result.
                if since_refactor > 0 && !retried_final {
                    self.refactor();
                    since_refactor = 0;
                    retried_final = true;
                    continue;
                }
                if phase1 {
                    // Widened bounds only enlarge the feasible set.
                    self.unperturb();
                    return Ok(self.finish(LpStatus::Infeasible, iterations));
                }
                if self.unperturb() {
                    since_refactor = 0;
                    degenerate = 0;
                    retried_final = true;
                    continue;
                }
                let sol = self.finish(LpStatus::Optimal, iterations);
                let viol = self.violation();
                if viol > 1e-6 {
                    return Err(LpError::NumericalBreakdown(format!(
                        "residual {viol:e} at the optimal basis after {iterations} iterations"
                    )));
                }
                return Ok(sol);
            }
            retried_final = false;

            let col = self.sess.column(enter);
            self.factor.ftran(&col, &mut alpha);
            // Moving the entering variable by t·dir changes basic x_B by -t·dir·alpha.
            let dir = if d[enter] < 0.0 { 1.0 } else { -1.0 };

            let span = self.upper[enter] - self.lower[enter];
            let (leave_pos, theta, leave_to_upper) = self.ratio_test(&alpha, dir, phase1, bland);
            let flip = span.is_finite() && (leave_pos == usize::MAX || span <= theta);
            if leave_pos == usize::MAX && !flip {
                if phase1 {
                    self.refactor();
                    since_refactor = 0;
                    if degenerate > self.params.bland_after * 4 {
                        return Err(LpError::NumericalBreakdown("unbounded phase-1 ray".into()));
                    }
                    degenerate += 1;
                    continue;
                }
                return Ok(self.finish(LpStatus::Unbounded, iterations));
            }
            let step = if flip { span } else { theta.max(0.0) };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            if step != 0.0 {
                for (pos, &j) in self.basis.iter().enumerate() {
                    if alpha[pos] != 0.0 {
                        self.x[j] -= step * dir * alpha[pos];
                    }
                }
                self.x[enter] += step * dir;
            }
            iterations += 1;
            if flip {
                self.status[enter] =
                    if self.status[enter] == VarStatus::AtUpper { VarStatus::AtLower } else { VarStatus::AtUpper };
                self.x[enter] =
                    if self.status[enter] == VarStatus::AtUpper { self.upper[enter] } else { self.lower[enter] };
                continue;
            }
            let leaving = self.basis[leave_pos];
            if alpha[leave_pos].abs() < 1e-11 {
                return Err(LpError::NumericalBreakdown(format!("pivot {:e} too small", alpha[leave_pos])));
            }
            self.status[leaving] = if leave_to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
            self.x[leaving] = if leave_to_upper { self.upper[leaving] } else { self.lower[leaving] };
            if !self.x[leaving].is_finite() {
                self.status[leaving] = VarStatus::Zero;
                self.x[leaving] = 0.0;
            }
            self.status[enter] = VarStatus::Basic;
            self.basis[leave_pos] = enter;
            self.factor.update(leave_pos, &alpha);
            since_refactor += 1;
        }
    }

    /// Harris-style two-pass ratio test. Returns the leaving position
    /// (`usize::MAX` if none), the step length and whether the leaving
    /// variable exits at its upper bound.
    fn ratio_test(&self, alpha: &[f64], dir: f64, phase1: bool, bland: bool) -> (usize, f64, bool) {
        const PIVOT_TOL: f64 = 1e-9;
        let tol = self.params.tol_feas;
        // Bound each basic variable runs into, relaxed by `slack`.
        let limit = |pos: usize, slack: f64| -> Option<(f64, bool)> {
            let a = alpha[pos];
            if a.abs() < PIVOT_TOL {
                return None;
            }
            let j = self.basis[pos];
            let v = self.x[j];
            let (l, u) = (self.lower[j], self.upper[j]);
            let rate = -dir * a;
            if rate > 0.0 {
                let target = if phase1 && v < l - tol { l } else { u };
                if !target.is_finite() || (phase1 && v > u + tol) {
                    return None;
                }
                Some(((target + slack - v) / rate, target == u))
            } else {
                let target = if phase1 && v > u + tol { u } else { l };
                if !target.is_finite() || (phase1 && v < l - tol) {
                    return None;
                }
                Some(((v - (target - slack)) / -rate, target == u))
            }
        };
        let m = alpha.len();
        let mut bound = f64::INFINITY;
        // Bland's rule needs the exact minimum ratio to guarantee termination.
        let slack = if bland { 0.0 } else { tol };
        for pos in 0..m {
            if let Some((t, _)) = limit(pos, slack) {
                bound = bound.min(t);
            }
        }
        if bland {
            bound += 1e-12;
        }
        if !bound.is_finite() {
            return (usize::MAX, f64::INFINITY, false);
        }
        let mut best = usize::MAX;
        let mut best_a = 0.0;
        let mut best_t = 0.0;
        let mut best_up = false;
        for pos in 0..m {
            if let Some((t, up)) = limit(pos, 0.0) {
                if t <= bound {
                    let a = alpha[pos].abs();
                    let better = if bland {
                        best == usize::MAX || self.basis[pos] < self.basis[best]
                    } else {
                        a > best_a
                    };
                    if better {
                        best = pos;
                        best_a = a;
                        best_t = t;
                        best_up = up;
                    }
                }
            }
        }
        (best, best_t, best_up)
    }

    fn violation(&self) -> f64 {
        let n = self.sess.n;
        let mut worst = 0.0f64;
        for j in 0..self.x.len() {
            worst = worst.max(self.infeasibility(j));
        }
        for (i, row) in self.sess.rows.iter().enumerate() {
            let lhs: f64 = row.iter().map(|&(j, a)| a * self.x[j]).sum();
            worst = worst.max((lhs - self.x[n + i]).abs());
        }
        worst
    }

    fn finish(&self, status: LpStatus, iterations: usize) -> LpSolution {
        let n = self.sess.n;
        let mut x = self.x[..n].to_vec();
        if status == LpStatus::Optimal {
            // Clean round-off against the column bounds.
            for (j, v) in x.iter_mut().enumerate() {
                *v = v.clamp(self.lower[j], self.upper[j]);
            }
        }
        let objective: f64 = -(0..n).map(|j| self.cost[j] * x[j]).sum::<f64>();
        LpSolution {
            status,
            x,
            objective: if status == LpStatus::Optimal { objective } else { f64::NAN },
            iterations,
            basis: Some(Basis(self.status.clone())),
        }
    }
}

#[cfg(test)]
mod tests;
