//! Kernel-distance balancing problems for the ATE, the stabilized ATE and
//! the ATT, and the weighted-mean effect estimators.

use nalgebra::DMatrix;

use crate::error::{KdbError, Result};
use crate::kernel::{block_gram, information_matrix, Bandwidth};
use crate::model::{BalanceWeights, Dataset, Target, WeightScheme};
use crate::qp::{solve_qp, QpSolution, QpStatus, QuadraticProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentConstraints {
    /// Simplex constraints only (KDBC).
    None,
    /// Simplex plus first-moment equalities (KDM1).
    FirstMoment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceScheme {
    pub target: Target,
    pub moments: MomentConstraints,
    pub lambda: f64,
}

impl BalanceScheme {
    pub fn new(target: Target, moments: MomentConstraints, lambda: f64) -> Self {
        BalanceScheme { target, moments, lambda }
    }

    pub fn kdbc() -> Self {
        Self::new(Target::Ate, MomentConstraints::None, 0.0)
    }

    pub fn kdm1() -> Self {
        Self::new(Target::Ate, MomentConstraints::FirstMoment, 0.0)
    }

    pub fn att_kdbc() -> Self {
        Self::new(Target::Att, MomentConstraints::None, 0.0)
    }

    pub fn att_kdm1() -> Self {
        Self::new(Target::Att, MomentConstraints::FirstMoment, 0.0)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn weight_scheme(&self) -> WeightScheme {
        match (self.target, self.moments) {
            (Target::Ate, MomentConstraints::None) => WeightScheme::Kdbc,
            (Target::Ate, MomentConstraints::FirstMoment) => WeightScheme::Kdm1,
            (Target::Att, MomentConstraints::None) => WeightScheme::AttKdbc,
            (Target::Att, MomentConstraints::FirstMoment) => WeightScheme::AttKdm1,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(KdbError::InvalidArgument(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// A balancing QP together with notes about covariates left out of the
/// moment rows.
#[derive(Debug, Clone)]
pub struct BalanceProblem {
    pub qp: QuadraticProgram,
    pub dropped_covariates: Vec<usize>,
    pub warnings: Vec<String>,
}

fn constant_value(v: &[f64]) -> Option<f64> {
    let first = *v.first()?;
    v.iter().all(|&x| x == first).then_some(first)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn hull(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Which covariates get a moment row; errors when a constant covariate
/// makes balance impossible.
fn moment_rows(data: &Dataset, target: Target) -> Result<(Vec<usize>, Vec<usize>, Vec<String>)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for d in 0..data.d() {
        let t = data.treated_column(d);
        let c = data.control_column(d);
        let c_const = constant_value(&c);
        let duplicate = match target {
            Target::Ate => match (constant_value(&t), c_const) {
                (Some(a), Some(b)) if a == b => true,
                (Some(a), Some(b)) => {
                    return Err(KdbError::InfeasibleBalance(format!(
                        "covariate {d} is constant at {a} among treated and {b} among controls"
                    )))
                }
                _ => false,
            },
            Target::Att => match c_const {
                Some(b) if b == mean(&t) => true,
                Some(b) => {
                    return Err(KdbError::InfeasibleBalance(format!(
                        "covariate {d} is constant at {b} among controls but the treated mean is {}",
                        mean(&t)
                    )))
                }
                None => false,
            },
        };
        if duplicate {
            dropped.push(d);
            warnings.push(format!("covariate {d} is constant; its moment constraint was dropped"));
        } else {
            keep.push(d);
        }
    }
    Ok((keep, dropped, warnings))
}

/// Convex-hull check for a single covariate.
fn hull_precheck(data: &Dataset, target: Target) -> Result<()> {
    if data.d() != 1 {
        return Ok(());
    }
    let t = data.treated_column(0);
    let (c_lo, c_hi) = hull(&data.control_column(0));
    match target {
        Target::Att => {
            let m = mean(&t);
            if m < c_lo || m > c_hi {
                return Err(KdbError::InfeasibleBalance(format!(
                    "treated mean {m} lies outside the control range [{c_lo}, {c_hi}]"
                )));
            }
        }
        Target::Ate => {
            let (t_lo, t_hi) = hull(&t);
            if t_hi < c_lo || c_hi < t_lo {
                return Err(KdbError::InfeasibleBalance(format!(
                    "treated range [{t_lo}, {t_hi}] and control range [{c_lo}, {c_hi}] do not overlap"
                )));
            }
        }
    }
    Ok(())
}

fn ate_constraints(data: &Dataset, scheme: &BalanceScheme) -> Result<(DMatrix<f64>, Vec<f64>, Vec<usize>, Vec<String>)> {
    let (n1, n) = (data.n1(), data.n());
    let (keep, dropped, warnings) = match scheme.moments {
        MomentConstraints::None => (Vec::new(), Vec::new(), Vec::new()),
        MomentConstraints::FirstMoment => moment_rows(data, Target::Ate)?,
    };
    let m = 2 + keep.len();
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n1 {
        a[(0, j)] = 1.0;
    }
    for j in n1..n {
        a[(1, j)] = 1.0;
    }
    for (r, &d) in keep.iter().enumerate() {
        for (j, v) in data.treated_column(d).into_iter().enumerate() {
            a[(2 + r, j)] = v;
        }
        for (j, v) in data.control_column(d).into_iter().enumerate() {
            a[(2 + r, n1 + j)] = -v;
        }
    }
    let mut b = vec![0.0; m];
    b[0] = 1.0;
    b[1] = 1.0;
    Ok((a, b, dropped, warnings))
}

/// ATE problem over `(p, q)` with `Q = K_G + lambda I`.
pub fn build_ate_problem(data: &Dataset, scheme: &BalanceScheme, bw: Bandwidth) -> Result<BalanceProblem> {
    scheme.check()?;
    if scheme.target != Target::Ate {
        return Err(KdbError::InvalidArgument("build_ate_problem needs an ATE scheme".into()));
    }
    let k = information_matrix(data, bw, scheme.lambda)?;
    let (a, b, dropped, warnings) = ate_constraints(data, scheme)?;
    let n = data.n();
    let qp = QuadraticProgram::new(k.k, a, b, vec![true; n])?;
    Ok(BalanceProblem { qp, dropped_covariates: dropped, warnings })
}

/// Ridged-toward-uniform ATE problem: minimizes
/// `w'K_G w + lambda (w - w0)'(w - w0)` under the simplex constraints.
pub fn build_stable_ate_problem(data: &Dataset, lambda: f64, bw: Bandwidth) -> Result<BalanceProblem> {
    let scheme = BalanceScheme::kdbc().with_lambda(lambda);
    let mut p = build_ate_problem(data, &scheme, bw)?;
    let (n1, n0) = (data.n1() as f64, data.n0() as f64);
    let c: Vec<f64> = (0..data.n())
        .map(|i| -lambda * if i < data.n1() { 1.0 / n1 } else { 1.0 / n0 })
        .collect();
    p.qp = p.qp.with_linear(c)?;
    Ok(p)
}

/// ATT problem over `q` alone, with `p` fixed at `1/n1`.
///
/// The solver objective is half of the balancing objective minus its
/// constant: `½ q'(K0 + lambda I)q - (1/n1) 1'K10 q`.
pub fn build_att_problem(data: &Dataset, scheme: &BalanceScheme, bw: Bandwidth) -> Result<BalanceProblem> {
    scheme.check()?;
    if scheme.target != Target::Att {
        return Err(KdbError::InvalidArgument("build_att_problem needs an ATT scheme".into()));
    }
    let (n1, n0) = (data.n1(), data.n0());
    let g = block_gram(data, bw);
    let mut q = g.view((n1, n1), (n0, n0)).into_owned();
    for j in 0..n0 {
        q[(j, j)] += scheme.lambda;
    }
    let c: Vec<f64> = (0..n0)
        .map(|j| -(0..n1).map(|i| g[(i, n1 + j)]).sum::<f64>() / n1 as f64)
        .collect();
    let (keep, dropped, warnings) = match scheme.moments {
        MomentConstraints::None => (Vec::new(), Vec::new(), Vec::new()),
        MomentConstraints::FirstMoment => moment_rows(data, Target::Att)?,
    };
    let m = 1 + keep.len();
    let mut a = DMatrix::zeros(m, n0);
    let mut b = vec![0.0; m];
    for j in 0..n0 {
        a[(0, j)] = 1.0;
    }
    b[0] = 1.0;
    for (r, &d) in keep.iter().enumerate() {
        for (j, v) in data.control_column(d).into_iter().enumerate() {
            a[(1 + r, j)] = v;
        }
        b[1 + r] = mean(&data.treated_column(d));
    }
    let qp = QuadraticProgram::new(q, a, b, vec![true; n0])?.with_linear(c)?;
    Ok(BalanceProblem { qp, dropped_covariates: dropped, warnings })
}

/// Weights plus the solver output that produced them.
#[derive(Debug, Clone)]
pub struct SolvedWeights {
    pub weights: BalanceWeights,
    pub solution: QpSolution,
    pub warnings: Vec<String>,
}

pub fn solve_weights(data: &Dataset, scheme: &BalanceScheme, bw: Bandwidth) -> Result<BalanceWeights> {
    Ok(solve_weights_detailed(data, scheme, bw)?.weights)
}

pub fn solve_weights_detailed(data: &Dataset, scheme: &BalanceScheme, bw: Bandwidth) -> Result<SolvedWeights> {
    if scheme.moments == MomentConstraints::FirstMoment {
        hull_precheck(data, scheme.target)?;
    }
    let (n1, n0) = (data.n1(), data.n0());
    let (problem, warm) = match scheme.target {
        Target::Ate => {
            let warm: Vec<f64> = (0..n1 + n0)
                .map(|i| if i < n1 { 1.0 / n1 as f64 } else { 1.0 / n0 as f64 })
                .collect();
            (build_ate_problem(data, scheme, bw)?, warm)
        }
        Target::Att => (build_att_problem(data, scheme, bw)?, vec![1.0 / n0 as f64; n0]),
    };
    let sol = solve_qp(&problem.qp, Some(&warm))?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(KdbError::InfeasibleBalance(
                "no nonnegative weights satisfy the balance constraints".into(),
            ))
        }
        QpStatus::MaxIterations => {
            return Err(KdbError::NumericalBreakdown("solver hit its iteration limit".into()))
        }
    }
    let clean = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| x.max(0.0)).collect() };
    let (p, q) = match scheme.target {
        Target::Ate => (clean(&sol.x[..n1]), clean(&sol.x[n1..])),
        Target::Att => (vec![1.0 / n1 as f64; n1], clean(&sol.x)),
    };
    let weights = BalanceWeights::new(p, q, scheme.weight_scheme(), scheme.lambda)?;
    Ok(SolvedWeights { weights, solution: sol, warnings: problem.warnings })
}

/// `Σ p_i Y_1i - Σ q_j Y_0j`.
pub fn estimate_ate(data: &Dataset, w: &BalanceWeights) -> Result<f64> {
    if w.scheme.target() != Target::Ate {
        return Err(KdbError::SchemeMismatch { expected: "ATE", found: w.scheme.name() });
    }
    w.check_dims(data)?;
    Ok(weighted_difference(data, &w.p, &w.q))
}

/// Treated mean minus the `q`-weighted control outcomes. Unadjusted
/// weights are accepted too, since their treated side is already `1/n1`.
pub fn estimate_att(data: &Dataset, w: &BalanceWeights) -> Result<f64> {
    if w.scheme.target() != Target::Att && w.scheme != WeightScheme::Unadjusted {
        return Err(KdbError::SchemeMismatch { expected: "ATT", found: w.scheme.name() });
    }
    w.check_dims(data)?;
    let p = vec![1.0 / data.n1() as f64; data.n1()];
    Ok(weighted_difference(data, &p, &w.q))
}

/// Dispatch on the scheme's target.
pub fn estimate(data: &Dataset, w: &BalanceWeights) -> Result<f64> {
    match w.scheme.target() {
        Target::Ate => estimate_ate(data, w),
        Target::Att => estimate_att(data, w),
    }
}

fn weighted_difference(data: &Dataset, p: &[f64], q: &[f64]) -> f64 {
    let y = data.y();
    let t: f64 = data.treated_indices().iter().zip(p).map(|(&i, w)| w * y[i]).sum();
    let c: f64 = data.control_indices().iter().zip(q).map(|(&i, w)| w * y[i]).sum();
    t - c
}
