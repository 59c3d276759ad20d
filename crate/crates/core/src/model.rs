//! Shared domain types: validated datasets, balancing weights and the
//! report records produced by estimation and diagnostics.

use nalgebra::DMatrix;

use crate::error::{KdbError, Result};

/// Tolerance for the consistency identity `Y = T*Y1 + (1-T)*Y0`.
const CONSISTENCY_TOL: f64 = 1e-9;

/// Estimand a set of weights targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Ate,
    Att,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Ate => "ATE",
            Target::Att => "ATT",
        }
    }
}

/// Covariates, binary treatment and observed outcome for `n1 + n0` units.
///
/// Rows keep the caller's order; treated and control index lists give the
/// block order used by the kernel information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    treated: Vec<bool>,
    y: Vec<f64>,
    y0: Option<Vec<f64>>,
    y1: Option<Vec<f64>>,
    treated_idx: Vec<usize>,
    control_idx: Vec<usize>,
}

/// Validate raw arrays into a [`Dataset`].
///
/// `t` must contain exactly 0.0 or 1.0; no coercion is attempted.
pub fn validate_dataset(x: DMatrix<f64>, t: &[f64], y: &[f64]) -> Result<Dataset> {
    let n = x.nrows();
    if t.len() != n {
        return Err(KdbError::DimensionMismatch(format!(
            "treatment has {} entries, covariates have {} rows",
            t.len(),
            n
        )));
    }
    if y.len() != n {
        return Err(KdbError::DimensionMismatch(format!(
            "outcome has {} entries, covariates have {} rows",
            y.len(),
            n
        )));
    }
    if x.ncols() == 0 {
        return Err(KdbError::DimensionMismatch("no covariate columns".into()));
    }
    let mut treated = Vec::with_capacity(n);
    for (row, &v) in t.iter().enumerate() {
        if v == 1.0 {
            treated.push(true);
        } else if v == 0.0 {
            treated.push(false);
        } else {
            return Err(KdbError::NonBinaryTreatment { row, value: v });
        }
    }
    for i in 0..n {
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(KdbError::NonFiniteValue { field: "covariates", row: i });
        }
        if !y[i].is_finite() {
            return Err(KdbError::NonFiniteValue { field: "outcome", row: i });
        }
    }
    let treated_idx: Vec<usize> = (0..n).filter(|&i| treated[i]).collect();
    let control_idx: Vec<usize> = (0..n).filter(|&i| !treated[i]).collect();
    if treated_idx.is_empty() {
        return Err(KdbError::EmptyGroup { group: "treated" });
    }
    if control_idx.is_empty() {
        return Err(KdbError::EmptyGroup { group: "control" });
    }
    Ok(Dataset {
        x,
        treated,
        y: y.to_vec(),
        y0: None,
        y1: None,
        treated_idx,
        control_idx,
    })
}

impl Dataset {
    /// Attach potential outcomes, checking the consistency identity.
    pub fn with_potential_outcomes(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        let n = self.n();
        if y0.len() != n || y1.len() != n {
            return Err(KdbError::DimensionMismatch(
                "potential outcomes must have one entry per unit".into(),
            ));
        }
        for i in 0..n {
            if !y0[i].is_finite() || !y1[i].is_finite() {
                return Err(KdbError::NonFiniteValue { field: "potential outcomes", row: i });
            }
            let expect = if self.treated[i] { y1[i] } else { y0[i] };
            let scale = 1.0 + expect.abs();
            if (self.y[i] - expect).abs() > CONSISTENCY_TOL * scale {
                return Err(KdbError::InvalidArgument(format!(
                    "observed outcome at row {i} is inconsistent with its potential outcomes"
                )));
            }
        }
        self.y0 = Some(y0);
        self.y1 = Some(y1);
        Ok(self)
    }

    /// Run the validated value back through validation.
    pub fn revalidate(&self) -> Result<Dataset> {
        let t: Vec<f64> = self.treated.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let d = validate_dataset(self.x.clone(), &t, &self.y)?;
        match (&self.y0, &self.y1) {
            (Some(y0), Some(y1)) => d.with_potential_outcomes(y0.clone(), y1.clone()),
            _ => Ok(d),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n1(&self) -> usize {
        self.treated_idx.len()
    }

    pub fn n0(&self) -> usize {
        self.control_idx.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y0(&self) -> Option<&[f64]> {
        self.y0.as_deref()
    }

    pub fn y1(&self) -> Option<&[f64]> {
        self.y1.as_deref()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treated[i]
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treated
    }

    /// Original row indices of treated units, in row order.
    pub fn treated_indices(&self) -> &[usize] {
        &self.treated_idx
    }

    /// Original row indices of control units, in row order.
    pub fn control_indices(&self) -> &[usize] {
        &self.control_idx
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Values of covariate `d` for the treated units (block order).
    pub fn treated_column(&self, d: usize) -> Vec<f64> {
        self.treated_idx.iter().map(|&i| self.x[(i, d)]).collect()
    }

    /// Values of covariate `d` for the control units (block order).
    pub fn control_column(&self, d: usize) -> Vec<f64> {
        self.control_idx.iter().map(|&i| self.x[(i, d)]).collect()
    }

    pub fn treated_outcomes(&self) -> Vec<f64> {
        self.treated_idx.iter().map(|&i| self.y[i]).collect()
    }

    pub fn control_outcomes(&self) -> Vec<f64> {
        self.control_idx.iter().map(|&i| self.y[i]).collect()
    }

    /// Covariate rows flattened row-major in block order (treated first).
    pub fn block_rows(&self) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(self.n() * d);
        for &i in self.treated_idx.iter().chain(self.control_idx.iter()) {
            for c in 0..d {
                out.push(self.x[(i, c)]);
            }
        }
        out
    }

    /// New dataset made of the given rows (with repetition allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let d = self.d();
        let x = DMatrix::from_fn(rows.len(), d, |r, c| self.x[(rows[r], c)]);
        let t: Vec<f64> = rows
            .iter()
            .map(|&i| if self.treated[i] { 1.0 } else { 0.0 })
            .collect();
        let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        let ds = validate_dataset(x, &t, &y)?;
        match (&self.y0, &self.y1) {
            (Some(y0), Some(y1)) => ds.with_potential_outcomes(
                rows.iter().map(|&i| y0[i]).collect(),
                rows.iter().map(|&i| y1[i]).collect(),
            ),
            _ => Ok(ds),
        }
    }
}

/// Which procedure produced a set of weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightScheme {
    /// Kernel balancing, simplex constraints only (ATE).
    Kdbc,
    /// Kernel balancing with first-moment equalities (ATE).
    Kdm1,
    /// Kernel balancing for the ATT, simplex constraints only.
    AttKdbc,
    /// Kernel balancing for the ATT with mean constraints.
    AttKdm1,
    IpwAte,
    /// Unnormalized odds weights on the control side.
    IpwAtt,
    /// Odds weights renormalized to sum to one.
    IpwAttNormalized,
    Unadjusted,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Kdbc => "KDBC",
            WeightScheme::Kdm1 => "KDM1",
            WeightScheme::AttKdbc => "ATT_KDBC",
            WeightScheme::AttKdm1 => "ATT_KDM1",
            WeightScheme::IpwAte => "IPW_ATE",
            WeightScheme::IpwAtt => "IPW_ATT",
            WeightScheme::IpwAttNormalized => "IPW_ATT_NORM",
            WeightScheme::Unadjusted => "UNADJUSTED",
        }
    }

    pub fn target(self) -> Target {
        match self {
            WeightScheme::Kdbc | WeightScheme::Kdm1 | WeightScheme::IpwAte | WeightScheme::Unadjusted => {
                Target::Ate
            }
            WeightScheme::AttKdbc | WeightScheme::AttKdm1 | WeightScheme::IpwAtt | WeightScheme::IpwAttNormalized => {
                Target::Att
            }
        }
    }
}

/// Treated-side weights `p` and control-side weights `q`, each in the
/// group's row order.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWeights {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub scheme: WeightScheme,
    pub lambda: f64,
}

pub(crate) const NONNEG_TOL: f64 = 1e-10;
pub(crate) const SIMPLEX_TOL: f64 = 1e-8;

impl BalanceWeights {
    /// Build weights and check the invariants for `scheme`.
    pub fn new(p: Vec<f64>, q: Vec<f64>, scheme: WeightScheme, lambda: f64) -> Result<Self> {
        let w = BalanceWeights { p, q, scheme, lambda };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(KdbError::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.p.is_empty() || self.q.is_empty() {
            return Err(KdbError::EmptySample);
        }
        if let Some(v) = self.p.iter().chain(self.q.iter()).find(|v| !v.is_finite() || **v < -NONNEG_TOL) {
            return Err(KdbError::InvalidArgument(format!("weight {v} is negative or non-finite")));
        }
        let sp: f64 = self.p.iter().sum();
        let sq: f64 = self.q.iter().sum();
        match self.scheme {
            WeightScheme::AttKdbc | WeightScheme::AttKdm1 | WeightScheme::IpwAtt | WeightScheme::IpwAttNormalized => {
                let u = 1.0 / self.p.len() as f64;
                if self.p.iter().any(|&v| v != u) {
                    return Err(KdbError::InvalidArgument(
                        "ATT weights need p_i = 1/n1 exactly".into(),
                    ));
                }
                if self.scheme != WeightScheme::IpwAtt && (sq - 1.0).abs() > SIMPLEX_TOL {
                    return Err(KdbError::InvalidArgument(format!("control weights sum to {sq}")));
                }
            }
            _ => {
                if (sp - 1.0).abs() > SIMPLEX_TOL || (sq - 1.0).abs() > SIMPLEX_TOL {
                    return Err(KdbError::InvalidArgument(format!(
                        "weights sum to ({sp}, {sq}); both sides must sum to 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_dims(&self, data: &Dataset) -> Result<()> {
        if self.p.len() != data.n1() || self.q.len() != data.n0() {
            return Err(KdbError::DimensionMismatch(format!(
                "weights are {}+{} but dataset has {}+{} units",
                self.p.len(),
                self.q.len(),
                data.n1(),
                data.n0()
            )));
        }
        Ok(())
    }

    /// Signed weights `(p, -q)` in block order.
    pub fn signed(&self) -> Vec<f64> {
        self.p.iter().copied().chain(self.q.iter().map(|v| -v)).collect()
    }

    /// Unsigned weights `(p, q)` in block order.
    pub fn stacked(&self) -> Vec<f64> {
        self.p.iter().chain(self.q.iter()).copied().collect()
    }
}

/// Bias, %Bias, SD and RMSE of an estimator over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: String,
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub bias: f64,
    pub pct_bias: f64,
    /// Standard error of the mean estimate: sample std / sqrt(N_sim).
    pub sd: f64,
    pub rmse: f64,
    pub truth: f64,
}

/// Balance statistics for one set of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub rw: f64,
    pub kd: f64,
    pub max_asmd: f64,
    pub mean_asmd: f64,
    pub med_asmd: f64,
    pub per_covariate_asmd: Vec<f64>,
    pub mean_ks: f64,
    pub mean_t: f64,
}
