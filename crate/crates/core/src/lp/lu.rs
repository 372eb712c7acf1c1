//! Sparse LU of the simplex basis (left-looking, Gilbert–Peierls) with a
//! product-form eta file for the updates between refactorizations.

/// Sparse column in row space.
pub type SparseCol = Vec<(usize, f64)>;

const PIVOT_THRESHOLD: f64 = 0.1;
const SINGULAR_TOL: f64 = 1e-11;

struct Eta {
    pos: usize,
    pivot: f64,
    others: Vec<(usize, f64)>,
}

pub struct Factor {
    m: usize,
    /// Pivot row of elimination step `k`.
    prow: Vec<usize>,
    /// Basis position eliminated at step `k`.
    qpos: Vec<usize>,
    l: Vec<SparseCol>,
    /// Strictly upper part of column `k`, indexed by step.
    u: Vec<SparseCol>,
    diag: Vec<f64>,
    etas: Vec<Eta>,
    work: Vec<f64>,
    work2: Vec<f64>,
}

/// For a singular basis: positions whose column was dropped, each paired
/// with the row whose logical takes its place.
pub struct Repair {
    pub replaced: Vec<(usize, usize)>,
}

impl Factor {
    /// Factorizes the basis `cols[pos]`. Columns that turn out dependent
    /// are replaced by unit columns `-e_row`, reported in [`Repair`].
    pub fn new(m: usize, cols: &mut [SparseCol]) -> (Factor, Repair) {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&p| (cols[p].len(), p));

        let mut pinv = vec![usize::MAX; m];
        let mut prow = Vec::with_capacity(m);
        let mut qpos = Vec::with_capacity(m);
        let mut l: Vec<SparseCol> = Vec::with_capacity(m);
        let mut u: Vec<SparseCol> = Vec::with_capacity(m);
        let mut diag = Vec::with_capacity(m);
        let mut x = vec![0.0; m];
        let mut mark = vec![0u32; m];
        let mut stamp = 0u32;
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut post: Vec<usize> = Vec::new();
        let mut deficient = Vec::new();

        for &pos in &order {
            stamp += 1;
            post.clear();
            for &(r, _) in &cols[pos] {
                if mark[r] == stamp {
                    continue;
                }
                mark[r] = stamp;
                stack.push((r, 0));
                while let Some(top) = stack.last_mut() {
                    let (row, next) = *top;
                    let step = pinv[row];
                    let children: &[(usize, f64)] = if step == usize::MAX { &[] } else { &l[step] };
                    let mut k = next;
                    while k < children.len() && mark[children[k].0] == stamp {
                        k += 1;
                    }
                    if k < children.len() {
                        top.1 = k + 1;
                        let c = children[k].0;
                        mark[c] = stamp;
                        stack.push((c, 0));
                    } else {
                        stack.pop();
                        post.push(row);
                    }
                }
            }
            for &(r, v) in &cols[pos] {
                x[r] += v;
            }
            for &row in post.iter().rev() {
                let step = pinv[row];
                if step == usize::MAX {
                    continue;
                }
                let xv = x[row];
                if xv != 0.0 {
                    for &(i, lv) in &l[step] {
                        x[i] -= lv * xv;
                    }
                }
            }
            let mut best = 0.0f64;
            for &row in &post {
                if pinv[row] == usize::MAX {
                    best = best.max(x[row].abs());
                }
            }
            if best <= SINGULAR_TOL {
                for &row in &post {
                    x[row] = 0.0;
                }
                deficient.push(pos);
                continue;
            }
            // Threshold pivoting, lowest acceptable row index first.
            let mut piv = usize::MAX;
            for &row in &post {
                if pinv[row] == usize::MAX && x[row].abs() >= PIVOT_THRESHOLD * best && (piv == usize::MAX || row < piv) {
                    piv = row;
                }
            }
            let k = prow.len();
            let pv = x[piv];
            let mut ucol = Vec::new();
            let mut lcol = Vec::new();
            for &row in &post {
                let v = x[row];
                x[row] = 0.0;
                if v == 0.0 || row == piv {
                    continue;
                }
                if pinv[row] == usize::MAX {
                    lcol.push((row, v / pv));
                } else {
                    ucol.push((pinv[row], v));
                }
            }
            pinv[piv] = k;
            prow.push(piv);
            qpos.push(pos);
            l.push(lcol);
            u.push(ucol);
            diag.push(pv);
        }

        let mut replaced = Vec::new();
        if !deficient.is_empty() {
            let free_rows: Vec<usize> = (0..m).filter(|&r| pinv[r] == usize::MAX).collect();
            debug_assert_eq!(free_rows.len(), deficient.len());
            for (&pos, &row) in deficient.iter().zip(&free_rows) {
                cols[pos] = vec![(row, -1.0)];
                pinv[row] = prow.len();
                prow.push(row);
                qpos.push(pos);
                l.push(Vec::new());
                u.push(Vec::new());
                diag.push(-1.0);
                replaced.push((pos, row));
            }
        }
        let factor = Factor { m, prow, qpos, l, u, diag, etas: Vec::new(), work: vec![0.0; m], work2: vec![0.0; m] };
        (factor, Repair { replaced })
    }

    /// Solves `B z = a`; `a` is given sparsely in row space, `z` is
    /// returned densely by basis position.
    pub fn ftran(&mut self, a: &[(usize, f64)], z: &mut [f64]) {
        let w = &mut self.work;
        for &(r, v) in a {
            w[r] += v;
        }
        self.ftran_work(z);
    }

    /// As [`Factor::ftran`] with a dense row-space right-hand side.
    pub fn ftran_dense(&mut self, a: &[f64], z: &mut [f64]) {
        self.work.copy_from_slice(a);
        self.ftran_work(z);
    }

    fn ftran_work(&mut self, z: &mut [f64]) {
        let w = &mut self.work;
        let wt = &mut self.work2;
        for j in 0..self.m {
            let r = self.prow[j];
            let v = w[r];
            w[r] = 0.0;
            wt[j] = v;
            if v != 0.0 {
                for &(i, lv) in &self.l[j] {
                    w[i] -= lv * v;
                }
            }
        }
        for k in (0..self.m).rev() {
            let zk = wt[k] / self.diag[k];
            wt[k] = 0.0;
            if zk != 0.0 {
                for &(j, uv) in &self.u[k] {
                    wt[j] -= uv * zk;
                }
            }
            z[self.qpos[k]] = zk;
        }
        for eta in &self.etas {
            let zr = z[eta.pos] / eta.pivot;
            if zr != 0.0 {
                for &(i, av) in &eta.others {
                    z[i] -= av * zr;
                }
            }
            z[eta.pos] = zr;
        }
    }

    /// Solves `Bᵀ y = c`; `c` by basis position (consumed), `y` in row space.
    pub fn btran(&mut self, c: &mut [f64], y: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut v = c[eta.pos];
            for &(i, av) in &eta.others {
                v -= av * c[i];
            }
            c[eta.pos] = v / eta.pivot;
        }
        let v = &mut self.work2;
        for k in 0..self.m {
            let mut acc = c[self.qpos[k]];
            for &(j, uv) in &self.u[k] {
                acc -= uv * v[j];
            }
            v[k] = acc / self.diag[k];
        }
        for j in (0..self.m).rev() {
            let mut acc = v[j];
            v[j] = 0.0;
            for &(i, lv) in &self.l[j] {
                acc -= lv * y[i];
            }
            y[self.prow[j]] = acc;
        }
    }

    /// Records the basis change at `pos` given `alpha = B⁻¹ a_q`.
    pub fn update(&mut self, pos: usize, alpha: &[f64]) {
        let others = alpha
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != pos && *v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        self.etas.push(Eta { pos, pivot: alpha[pos], others });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(cols: &[SparseCol], z: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (p, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                out[r] += v * z[p];
            }
        }
        out
    }

    fn sample() -> Vec<SparseCol> {
        vec![
            vec![(0, 2.0), (2, 1.0)],
            vec![(1, -1.0), (3, 4.0)],
            vec![(0, 1.0), (1, 3.0), (2, 5.0)],
            vec![(3, 1.0), (2, -2.0)],
        ]
    }

    #[test]
    fn solves_round_trip() {
        let mut cols = sample();
        let (mut f, rep) = Factor::new(4, &mut cols);
        assert!(rep.replaced.is_empty());
        let rhs = [1.0, -2.0, 0.5, 3.0];
        let mut z = vec![0.0; 4];
        f.ftran_dense(&rhs, &mut z);
        let back = dense_mul(&cols, &z, 4);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut c = vec![1.0, 2.0, 3.0, 4.0];
        let mut y = vec![0.0; 4];
        f.btran(&mut c.clone(), &mut y);
        for (p, col) in cols.iter().enumerate() {
            let dotv: f64 = col.iter().map(|&(r, v)| v * y[r]).sum();
            assert!((dotv - c[p]).abs() < 1e-12);
        }
        // Replace column 1 and check both solves against the new matrix.
        let newcol: SparseCol = vec![(1, 1.0), (0, 1.0)];
        let mut alpha = vec![0.0; 4];
        f.ftran(&newcol, &mut alpha);
        f.update(1, &alpha);
        cols[1] = newcol;
        f.ftran_dense(&rhs, &mut z);
        let back = dense_mul(&cols, &z, 4);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
        f.btran(&mut c, &mut y);
        c = vec![1.0, 2.0, 3.0, 4.0];
        for (p, col) in cols.iter().enumerate() {
            let dotv: f64 = col.iter().map(|&(r, v)| v * y[r]).sum();
            assert!((dotv - c[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_columns_are_replaced() {
        let mut cols = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(2, 1.0)]];
        let (_, rep) = Factor::new(3, &mut cols);
        assert_eq!(rep.replaced.len(), 1);
        let (pos, row) = rep.replaced[0];
        assert_eq!(cols[pos], vec![(row, -1.0)]);
    }
}
