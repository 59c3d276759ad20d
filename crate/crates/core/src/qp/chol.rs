//! Dense lower Cholesky factor that supports appending and deleting a
//! variable without refactoring from scratch.

/// Lower-triangular factor stored row by row; row `i` has `i + 1` entries.
#[derive(Debug, Clone, Default)]
pub(crate) struct UpdatableCholesky {
    rows: Vec<Vec<f64>>,
}

impl UpdatableCholesky {
    pub fn new() -> Self {
        UpdatableCholesky { rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Extend the factored matrix by one row/column. `col` holds the new
    /// off-diagonal entries against the current variables and `diag` the
    /// new diagonal. Returns `false` when the new pivot falls below
    /// `min_pivot`, leaving the factor untouched.
    pub fn append(&mut self, col: &[f64], diag: f64, min_pivot: f64) -> bool {
        let k = self.dim();
        debug_assert_eq!(col.len(), k);
        let mut l = Vec::with_capacity(k + 1);
        for i in 0..k {
            let row = &self.rows[i];
            let mut s = col[i];
            for j in 0..i {
                s -= row[j] * l[j];
            }
            l.push(s / row[i]);
        }
        let d2 = diag - l.iter().map(|v| v * v).sum::<f64>();
        if !(d2 >= min_pivot) {
            return false;
        }
        l.push(d2.sqrt());
        self.rows.push(l);
        true
    }

    /// Remove variable `j`, restoring the trailing block with a rank-one
    /// update.
    pub fn delete(&mut self, j: usize) {
        self.rows.remove(j);
        let k = self.dim();
        let mut v: Vec<f64> = (j..k).map(|i| self.rows[i].remove(j)).collect();
        for t in 0..v.len() {
            let i = j + t;
            let lii = self.rows[i][i];
            let r = lii.hypot(v[t]);
            let c = r / lii;
            let s = v[t] / lii;
            self.rows[i][i] = r;
            for u in (t + 1)..v.len() {
                let row = &mut self.rows[j + u];
                row[i] = (row[i] + s * v[u]) / c;
                v[u] = c * v[u] - s * row[i];
            }
        }
    }

    /// Solve `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.dim() {
            let row = &self.rows[i];
            let mut s = b[i];
            for j in 0..i {
                s -= row[j] * b[j];
            }
            b[i] = s / row[i];
        }
    }

    /// Forward-solve a single row `i` given already-solved rows `< i`.
    pub fn forward_row(&self, i: usize, rhs: f64, solved: impl Fn(usize) -> f64) -> f64 {
        let row = &self.rows[i];
        let mut s = rhs;
        for j in 0..i {
            s -= row[j] * solved(j);
        }
        s / row[i]
    }

    /// Solve `L' x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let row = &self.rows[i];
            let xi = y[i] / row[i];
            y[i] = xi;
            for j in 0..i {
                y[j] -= row[j] * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn build(m: &DMatrix<f64>, idx: &[usize]) -> UpdatableCholesky {
        let mut c = UpdatableCholesky::new();
        for (p, &i) in idx.iter().enumerate() {
            let col: Vec<f64> = idx[..p].iter().map(|&j| m[(j, i)]).collect();
            assert!(c.append(&col, m[(i, i)], 1e-14));
        }
        c
    }

    fn solve(c: &UpdatableCholesky, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        c.forward(&mut y);
        c.backward(&mut y);
        y
    }

    #[test]
    fn append_matches_direct_solve() {
        let m = spd(6, 1);
        let c = build(&m, &[0, 1, 2, 3, 4, 5]);
        let b = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let x = solve(&c, &b);
        let r = &m * nalgebra::DVector::from_column_slice(&x);
        for i in 0..6 {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn delete_matches_fresh_factor() {
        let m = spd(7, 2);
        let mut c = build(&m, &[0, 1, 2, 3, 4, 5, 6]);
        c.delete(2);
        c.delete(4);
        let fresh = build(&m, &[0, 1, 3, 4, 6]);
        for i in 0..5 {
            for j in 0..=i {
                assert!((c.rows[i][j] - fresh.rows[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn append_rejects_singular_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let mut c = UpdatableCholesky::new();
        assert!(c.append(&[], 1.0, 1e-12));
        assert!(!c.append(&[m[(0, 1)]], m[(1, 1)], 1e-12));
        assert_eq!(c.dim(), 1);
    }
}
