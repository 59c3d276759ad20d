//! Convex quadratic programs with linear equalities and nonnegativity
//! bounds:
//!
//! ```text
//! minimize    ½ x'Qx + c'x
//! subject to  A x = b,  x_i >= 0 for masked i
//! ```
//!
//! Solved by a primal active-set method started from a feasible point
//! (the warm start when it is feasible, otherwise a nonnegative
//! least-squares point). Multipliers follow the convention
//! `Qx + c - λ + A'ν = 0` with `λ >= 0`.

mod chol;
mod nnls;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{KdbError, Result};
use chol::UpdatableCholesky;

const FEAS_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;
const MAX_ESCALATIONS: u32 = 6;

/// Problem data. Build with [`QuadraticProgram::new`], optionally adding
/// a linear term with [`QuadraticProgram::with_linear`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    q: DMatrix<f64>,
    c: Vec<f64>,
    a: DMatrix<f64>,
    b: Vec<f64>,
    nonneg: Vec<bool>,
    consistent: bool,
    // Per-row scaling of A used internally; 1/||a_i||.
    row_scale: Vec<f64>,
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

impl QuadraticProgram {
    pub fn new(q: DMatrix<f64>, a: DMatrix<f64>, b: Vec<f64>, nonneg: Vec<bool>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n {
            return Err(KdbError::DimensionMismatch(format!("Q is {}x{}", q.nrows(), q.ncols())));
        }
        if a.ncols() != n || a.nrows() != b.len() || nonneg.len() != n {
            return Err(KdbError::DimensionMismatch(format!(
                "A is {}x{}, b has {} entries, mask has {}; Q is {n}x{n}",
                a.nrows(),
                a.ncols(),
                b.len(),
                nonneg.len()
            )));
        }
        if q.iter().chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(KdbError::InvalidArgument("non-finite problem data".into()));
        }
        let qmax = q.amax().max(1.0);
        for j in 0..n {
            for i in 0..j {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-10 * qmax {
                    return Err(KdbError::InvalidArgument(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let m = a.nrows();
        let row_scale: Vec<f64> = (0..m)
            .map(|r| {
                let nr = a.row(r).norm();
                if nr > 0.0 {
                    1.0 / nr
                } else {
                    1.0
                }
            })
            .collect();
        let a_s = DMatrix::from_fn(m, n, |r, j| a[(r, j)] * row_scale[r]);
        let rank = numeric_rank(&a_s);
        let mut consistent = true;
        if rank < m {
            let mut ab = a_s.clone().insert_column(n, 0.0);
            for r in 0..m {
                ab[(r, n)] = b[r] * row_scale[r];
            }
            if numeric_rank(&ab) > rank {
                consistent = false;
            } else {
                return Err(KdbError::RankDeficient { rank, rows: m });
            }
        }
        Ok(QuadraticProgram { c: vec![0.0; n], q, a, b, nonneg, consistent, row_scale })
    }

    /// Add the linear term `c'x` to the objective.
    pub fn with_linear(mut self, c: Vec<f64>) -> Result<Self> {
        if c.len() != self.n() {
            return Err(KdbError::DimensionMismatch(format!(
                "linear term has {} entries, expected {}",
                c.len(),
                self.n()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(KdbError::InvalidArgument("non-finite linear term".into()));
        }
        self.c = c;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn nonneg(&self) -> &[bool] {
        &self.nonneg
    }

    /// False when the equality rows contradict each other.
    pub fn is_consistent(&self) -> bool {
        self.consistent
    }

    /// `½ x'Qx + c'x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.q * &xv)) + self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    fn a_s(&self, r: usize, j: usize) -> f64 {
        self.a[(r, j)] * self.row_scale[r]
    }

    fn b_s(&self, r: usize) -> f64 {
        self.b[r] * self.row_scale[r]
    }

    fn eq_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.m() {
            let mut s = -self.b[r];
            for j in 0..self.n() {
                s += self.a[(r, j)] * x[j];
            }
            worst = worst.max(s.abs());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// Partial step; the variable hit its bound and joined the working set.
    Block(usize),
    /// Variable with a negative multiplier left the working set.
    Release(usize),
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal_eq: f64,
    pub free: usize,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Equality multipliers ν.
    pub dual_eq: Vec<f64>,
    /// Bound multipliers λ (zero on unbounded variables).
    pub dual_ineq: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Ridge added to Q when factoring.
    pub ridge: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_bound: f64,
    pub complementarity: f64,
    pub dual_feas: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_bound)
            .max(self.complementarity)
            .max(self.dual_feas)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub record_trace: bool,
    /// Starting ridge; defaults to `1e-10 * trace(Q) / n`.
    pub initial_ridge: Option<f64>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { max_iter: 50_000, tol: 1e-8, record_trace: false, initial_ridge: None }
    }
}

pub fn solve_qp(prob: &QuadraticProgram, warm_start: Option<&[f64]>) -> Result<QpSolution> {
    solve_qp_with(prob, warm_start, &QpOptions::default())
}

pub fn solve_qp_with(
    prob: &QuadraticProgram,
    warm_start: Option<&[f64]>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = prob.n();
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(KdbError::DimensionMismatch(format!(
                "warm start has {} entries, expected {n}",
                w.len()
            )));
        }
    }
    let (start, p1_iters) = match phase_one(prob, warm_start) {
        Some(s) => s,
        None => return Ok(infeasible(prob)),
    };

    let tr = prob.q.trace();
    let base = opts
        .initial_ridge
        .unwrap_or(if tr > 0.0 && n > 0 { 1e-10 * tr / n as f64 } else { 1e-10 });
    let mut last = String::new();
    for esc in 0..=MAX_ESCALATIONS {
        let delta = base * 10f64.powi(esc as i32);
        match ActiveSet::run(prob, &start, delta, opts) {
            Ok(mut sol) => {
                sol.iterations += p1_iters;
                let res = kkt_residuals(prob, &sol)?;
                sol.kkt_residual = res.max();
                if sol.status != QpStatus::Optimal || sol.kkt_residual <= opts.tol {
                    return Ok(sol);
                }
                last = format!("KKT residual {:.3e} with ridge {delta:.1e}", sol.kkt_residual);
            }
            Err(msg) => last = msg,
        }
    }
    Err(KdbError::NumericalBreakdown(last))
}

fn infeasible(prob: &QuadraticProgram) -> QpSolution {
    let n = prob.n();
    let x = vec![0.0; n];
    QpSolution {
        objective: prob.objective(&x),
        x,
        dual_eq: vec![0.0; prob.m()],
        dual_ineq: vec![0.0; n],
        status: QpStatus::Infeasible,
        iterations: 0,
        kkt_residual: f64::INFINITY,
        ridge: 0.0,
        trace: Vec::new(),
    }
}

/// Feasible starting point, or `None` when the constraints are infeasible.
fn phase_one(prob: &QuadraticProgram, warm: Option<&[f64]>) -> Option<(Vec<f64>, usize)> {
    if !prob.consistent {
        return None;
    }
    let (n, m) = (prob.n(), prob.m());
    let bnorm = (0..m).map(|r| prob.b_s(r).abs()).fold(0.0, f64::max);
    let scaled_gap = |x: &[f64]| -> f64 {
        (0..m)
            .map(|r| ((0..n).map(|j| prob.a_s(r, j) * x[j]).sum::<f64>() - prob.b_s(r)).abs())
            .fold(0.0, f64::max)
    };
    if let Some(w) = warm {
        if w.iter().all(|v| v.is_finite()) {
            let ok_bounds = (0..n).all(|i| !prob.nonneg[i] || w[i] >= -1e-12);
            if ok_bounds {
                let x: Vec<f64> =
                    (0..n).map(|i| if prob.nonneg[i] { w[i].max(0.0) } else { w[i] }).collect();
                if scaled_gap(&x) <= FEAS_TOL * (1.0 + bnorm) {
                    return Some((x, 0));
                }
            }
        }
    }
    if m == 0 {
        return Some((vec![0.0; n], 0));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !prob.nonneg[i]).collect();
    let cols = n + free.len();
    let e = DMatrix::from_fn(m, cols, |r, j| {
        if j < n {
            prob.a_s(r, j)
        } else {
            -prob.a_s(r, free[j - n])
        }
    });
    let f: Vec<f64> = (0..m).map(|r| prob.b_s(r)).collect();
    let res = nnls::nnls(&e, &f, 30 * cols.max(10));
    let mut x = res.x[..n].to_vec();
    for (k, &i) in free.iter().enumerate() {
        x[i] -= res.x[n + k];
    }
    if scaled_gap(&x) <= FEAS_TOL * (1.0 + bnorm) {
        Some((x, res.iterations))
    } else {
        None
    }
}

/// Solver for the small `m x m` Schur complement system.
enum SmallSolve {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Pinv(DMatrix<f64>),
    Empty,
}

impl SmallSolve {
    fn new(s: DMatrix<f64>) -> Self {
        if s.nrows() == 0 {
            return SmallSolve::Empty;
        }
        let smax = s.diagonal().amax();
        if let Some(ch) = s.clone().cholesky() {
            let l = ch.l_dirty();
            let dmin = (0..s.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
            if dmin * dmin > 1e-14 * smax {
                return SmallSolve::Chol(ch);
            }
        }
        let svd = s.svd(true, true);
        let tol = 1e-13 * svd.singular_values.max();
        SmallSolve::Pinv(svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(0, 0)))
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(r);
        match self {
            SmallSolve::Chol(ch) => ch.solve(&v).iter().copied().collect(),
            SmallSolve::Pinv(p) if p.nrows() == r.len() => (p * v).iter().copied().collect(),
            _ => vec![0.0; r.len()],
        }
    }
}

struct ActiveSet<'a> {
    prob: &'a QuadraticProgram,
    delta: f64,
    free: Vec<usize>,
    in_free: Vec<bool>,
    chol: UpdatableCholesky,
    // Rows of L^{-1} [A_F' c_F] (scaled A), one per free variable.
    zc: Vec<Vec<f64>>,
}

impl<'a> ActiveSet<'a> {
    fn rhs(&self, i: usize, r: usize) -> f64 {
        if r < self.prob.m() {
            self.prob.a_s(r, i)
        } else {
            self.prob.c[i]
        }
    }

    fn zc_row(&self, t: usize) -> Vec<f64> {
        let i = self.free[t];
        (0..=self.prob.m())
            .map(|r| self.chol.forward_row(t, self.rhs(i, r), |j| self.zc[j][r]))
            .collect()
    }

    fn add(&mut self, i: usize) -> std::result::Result<(), String> {
        let q = &self.prob.q;
        let col: Vec<f64> = self.free.iter().map(|&j| q[(j, i)]).collect();
        if !self.chol.append(&col, q[(i, i)] + self.delta, 0.5 * self.delta) {
            return Err(format!("factorization lost positive definiteness at variable {i}"));
        }
        self.free.push(i);
        self.in_free[i] = true;
        let row = self.zc_row(self.free.len() - 1);
        self.zc.push(row);
        Ok(())
    }

    fn remove_at(&mut self, pos: usize) {
        let i = self.free.remove(pos);
        self.in_free[i] = false;
        self.chol.delete(pos);
        self.zc.remove(pos);
        for t in pos..self.free.len() {
            let row = self.zc_row(t);
            self.zc[t] = row;
        }
    }

    /// Minimizer of the objective over `{x : A x = b, x_j = 0 off F}`,
    /// returned as values on `F` plus scaled equality multipliers.
    fn eqp(&self) -> (Vec<f64>, Vec<f64>) {
        let prob = self.prob;
        let (k, m) = (self.free.len(), prob.m());
        let mut s = DMatrix::zeros(m, m);
        for row in &self.zc {
            for a in 0..m {
                for b in 0..=a {
                    s[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                s[(b, a)] = s[(a, b)];
            }
        }
        let ss = SmallSolve::new(s);

        // S ν = -(b + Z'u)
        let mut r: Vec<f64> = (0..m).map(|a| -prob.b_s(a)).collect();
        for row in &self.zc {
            for a in 0..m {
                r[a] -= row[a] * row[m];
            }
        }
        let mut nu = ss.solve(&r);
        let mut x: Vec<f64> = self
            .zc
            .iter()
            .map(|row| -(row[m] + (0..m).map(|a| row[a] * nu[a]).sum::<f64>()))
            .collect();
        self.chol.backward(&mut x);

        // Refinement against the unridged Q.
        for _ in 0..2 {
            let mut r1 = vec![0.0; k];
            for (pj, &j) in self.free.iter().enumerate() {
                let col = prob.q.column(j);
                let xj = x[pj];
                if xj != 0.0 {
                    for (pi, &i) in self.free.iter().enumerate() {
                        r1[pi] += col[i] * xj;
                    }
                }
            }
            for (pi, &i) in self.free.iter().enumerate() {
                r1[pi] += prob.c[i] + (0..m).map(|a| prob.a_s(a, i) * nu[a]).sum::<f64>();
            }
            let r2: Vec<f64> = (0..m)
                .map(|a| {
                    self.free.iter().enumerate().map(|(pi, &i)| prob.a_s(a, i) * x[pi]).sum::<f64>()
                        - prob.b_s(a)
                })
                .collect();
            self.chol.forward(&mut r1);
            let mut rr = r2;
            for (t, row) in self.zc.iter().enumerate() {
                for a in 0..m {
                    rr[a] -= row[a] * r1[t];
                }
            }
            let dnu = ss.solve(&rr);
            let mut dx: Vec<f64> = self
                .zc
                .iter()
                .enumerate()
                .map(|(t, row)| -(r1[t] + (0..m).map(|a| row[a] * dnu[a]).sum::<f64>()))
                .collect();
            self.chol.backward(&mut dx);
            for t in 0..k {
                x[t] += dx[t];
            }
            for a in 0..m {
                nu[a] += dnu[a];
            }
        }
        (x, nu)
    }

    fn gradient(&self, x: &[f64], nu_s: &[f64]) -> Vec<f64> {
        let prob = self.prob;
        let n = prob.n();
        let mut g = prob.c.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                let col = prob.q.column(j);
                for i in 0..n {
                    g[i] += col[i] * x[j];
                }
            }
        }
        for a in 0..prob.m() {
            for i in 0..n {
                g[i] += prob.a_s(a, i) * nu_s[a];
            }
        }
        g
    }

    /// Make the free set's equality block full row rank by adding
    /// variables at zero.
    fn ensure_row_rank(&mut self) -> std::result::Result<(), String> {
        let prob = self.prob;
        let (n, m) = (prob.n(), prob.m());
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let try_add = |basis: &mut Vec<Vec<f64>>, i: usize, rel: f64| -> bool {
            let mut v: Vec<f64> = (0..m).map(|a| prob.a_s(a, i)).collect();
            let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n0 == 0.0 {
                return false;
            }
            for _ in 0..2 {
                for u in basis.iter() {
                    let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vv, uu) in v.iter_mut().zip(u) {
                        *vv -= d * uu;
                    }
                }
            }
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv > rel * n0 {
                basis.push(v.into_iter().map(|x| x / nv).collect());
                true
            } else {
                false
            }
        };
        for &i in &self.free {
            if basis.len() == m {
                break;
            }
            try_add(&mut basis, i, 1e-8);
        }
        let mut extra = Vec::new();
        for i in 0..n {
            if basis.len() == m {
                break;
            }
            if !self.in_free[i] && try_add(&mut basis, i, 1e-6) {
                extra.push(i);
            }
        }
        for i in extra {
            self.add(i)?;
        }
        Ok(())
    }

    fn run(
        prob: &'a QuadraticProgram,
        start: &[f64],
        delta: f64,
        opts: &QpOptions,
    ) -> std::result::Result<QpSolution, String> {
        let n = prob.n();
        let m = prob.m();
        let mut st = ActiveSet {
            prob,
            delta,
            free: Vec::new(),
            in_free: vec![false; n],
            chol: UpdatableCholesky::new(),
            zc: Vec::new(),
        };
        let mut x = start.to_vec();
        for i in 0..n {
            if !prob.nonneg[i] || x[i] > 0.0 {
                st.add(i)?;
            }
        }
        st.ensure_row_rank()?;

        let release_tol = (0.1 * opts.tol).min(1e-11);
        let mut trace = Vec::new();
        let mut nu_s = vec![0.0; m];
        let mut status = QpStatus::MaxIterations;
        // Anti-cycling: a block that fails to improve the best objective
        // bars the blocked variable from release until progress resumes.
        let mut best = prob.objective(&x);
        let mut stalled = vec![false; n];
        let mut iter = 0;
        while iter < opts.max_iter {
            iter += 1;
            let (xf, nu) = st.eqp();
            if xf.iter().chain(nu.iter()).any(|v| !v.is_finite()) {
                return Err("non-finite iterate".into());
            }
            let mut alpha = 1.0;
            let mut block: Option<(usize, usize)> = None;
            for (p, &i) in st.free.iter().enumerate() {
                if prob.nonneg[i] && xf[p] < 0.0 {
                    let a = x[i] / (x[i] - xf[p]);
                    let better = match block {
                        None => a < alpha,
                        Some((_, bi)) => a < alpha || (a == alpha && i < bi),
                    };
                    if better {
                        alpha = a;
                        block = Some((p, i));
                    }
                }
            }
            let event;
            if let Some((pos, i)) = block {
                for (p, &j) in st.free.iter().enumerate() {
                    x[j] += alpha * (xf[p] - x[j]);
                    if prob.nonneg[j] && x[j] < 0.0 {
                        x[j] = 0.0;
                    }
                }
                x[i] = 0.0;
                st.remove_at(pos);
                let f = prob.objective(&x);
                if f < best {
                    best = f;
                    stalled.iter_mut().for_each(|s| *s = false);
                } else {
                    stalled[i] = true;
                }
                event = TraceEvent::Block(i);
            } else {
                for (p, &j) in st.free.iter().enumerate() {
                    x[j] = xf[p];
                }
                nu_s = nu;
                let f = prob.objective(&x);
                if f < best {
                    best = f;
                    stalled.iter_mut().for_each(|s| *s = false);
                }
                let g = st.gradient(&x, &nu_s);
                let mut worst: Option<usize> = None;
                for i in 0..n {
                    if prob.nonneg[i] && !st.in_free[i] && !stalled[i] && g[i] < -release_tol {
                        if worst.map_or(true, |w| g[i] < g[w]) {
                            worst = Some(i);
                        }
                    }
                }
                match worst {
                    Some(i) => {
                        st.add(i)?;
                        event = TraceEvent::Release(i);
                    }
                    None => {
                        status = QpStatus::Optimal;
                        if opts.record_trace {
                            trace.push(TraceRow {
                                iteration: iter,
                                objective: prob.objective(&x),
                                primal_eq: prob.eq_residual(&x),
                                free: st.free.len(),
                                event: TraceEvent::Optimal,
                            });
                        }
                        break;
                    }
                }
            }
            if opts.record_trace {
                trace.push(TraceRow {
                    iteration: iter,
                    objective: prob.objective(&x),
                    primal_eq: prob.eq_residual(&x),
                    free: st.free.len(),
                    event,
                });
            }
        }
        if status != QpStatus::Optimal {
            // Multipliers at the last stationary point are stale; refresh
            // them from the current free set.
            let (_, nu) = st.eqp();
            nu_s = nu;
        }
        let g = st.gradient(&x, &nu_s);
        let dual_ineq: Vec<f64> = (0..n)
            .map(|i| if prob.nonneg[i] && !st.in_free[i] { g[i] } else { 0.0 })
            .collect();
        let dual_eq: Vec<f64> = (0..m).map(|a| nu_s[a] * prob.row_scale[a]).collect();
        Ok(QpSolution {
            objective: prob.objective(&x),
            x,
            dual_eq,
            dual_ineq,
            status,
            iterations: iter,
            kkt_residual: f64::NAN,
            ridge: delta,
            trace,
        })
    }
}

/// Infinity-norm KKT residuals of `sol` for `prob`.
pub fn kkt_residuals(prob: &QuadraticProgram, sol: &QpSolution) -> Result<KktResiduals> {
    let (n, m) = (prob.n(), prob.m());
    if sol.x.len() != n || sol.dual_ineq.len() != n || sol.dual_eq.len() != m {
        return Err(KdbError::DimensionMismatch("solution does not match problem".into()));
    }
    let x = DVector::from_column_slice(&sol.x);
    let nu = DVector::from_column_slice(&sol.dual_eq);
    let st = &prob.q * &x + DVector::from_column_slice(&prob.c)
        - DVector::from_column_slice(&sol.dual_ineq)
        + prob.a.tr_mul(&nu);
    let mut r = KktResiduals {
        stationarity: st.amax(),
        primal_eq: prob.eq_residual(&sol.x),
        primal_bound: 0.0,
        complementarity: 0.0,
        dual_feas: 0.0,
    };
    for i in 0..n {
        let l = sol.dual_ineq[i];
        if prob.nonneg[i] {
            r.primal_bound = r.primal_bound.max(-sol.x[i]);
            r.complementarity = r.complementarity.max((l * sol.x[i]).abs());
            r.dual_feas = r.dual_feas.max(-l);
        } else {
            r.dual_feas = r.dual_feas.max(l.abs());
        }
    }
    Ok(r)
}

/// Lagrange dual function `g(λ, ν) = -½ u'Q⁻¹u - ν'b` with
/// `u = c - λ + A'ν`.
pub fn dual_objective(prob: &QuadraticProgram, lambda: &[f64], nu: &[f64]) -> Result<f64> {
    let (n, m) = (prob.n(), prob.m());
    if lambda.len() != n || nu.len() != m {
        return Err(KdbError::DimensionMismatch("multiplier lengths do not match problem".into()));
    }
    let ch = prob.q.clone().cholesky().ok_or(KdbError::SingularQ)?;
    let l = ch.l_dirty();
    let dmax = prob.q.diagonal().amax();
    if (0..n).any(|i| l[(i, i)] * l[(i, i)] <= 1e-14 * dmax) {
        return Err(KdbError::SingularQ);
    }
    let nuv = DVector::from_column_slice(nu);
    let u = DVector::from_column_slice(&prob.c) - DVector::from_column_slice(lambda) + prob.a.tr_mul(&nuv);
    let qu = ch.solve(&u);
    Ok(-0.5 * u.dot(&qu) - nuv.dot(&DVector::from_column_slice(&prob.b)))
}

/// Write an iteration trace as comma-separated text.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,objective,primal_eq,free,event")?;
    for r in trace {
        let ev = match r.event {
            TraceEvent::Block(i) => format!("block:{i}"),
            TraceEvent::Release(i) => format!("release:{i}"),
            TraceEvent::Optimal => "optimal".to_string(),
        };
        writeln!(out, "{},{},{},{},{}", r.iteration, r.objective, r.primal_eq, r.free, ev)?;
    }
    Ok(())
}
