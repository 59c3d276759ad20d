//! Kang–Schafer design with optional misspecification of the treatment
//! and outcome models.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{bernoulli_vec, check_groups, standardize_columns, SimulatedData};
use crate::error::{KdbError, Result};
use crate::model::validate_dataset;

/// Which covariates drive a model: the observed `X` or the transformed `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateSet {
    X,
    U,
}

impl CovariateSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(CovariateSet::X),
            "U" | "u" => Ok(CovariateSet::U),
            _ => Err(KdbError::InvalidArgument(format!("covariate set must be X or U, got {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovariateSet::X => "X",
            CovariateSet::U => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KangSchaferConfig {
    pub n: usize,
    /// Error variance of each potential outcome.
    pub sigma2_outcome: f64,
    /// Correlation between the two potential-outcome errors.
    pub rho: f64,
    pub delta_t: CovariateSet,
    pub delta_o: CovariateSet,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for KangSchaferConfig {
    fn default() -> Self {
        KangSchaferConfig {
            n: 200,
            sigma2_outcome: 10.0,
            rho: 0.0,
            delta_t: CovariateSet::X,
            delta_o: CovariateSet::X,
            gamma: 20.0,
            seed: 0,
        }
    }
}

impl KangSchaferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(KdbError::InvalidArgument(format!("n must be at least 20, got {}", self.n)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(KdbError::InvalidArgument(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.sigma2_outcome >= 0.0 && self.sigma2_outcome.is_finite()) {
            return Err(KdbError::InvalidArgument("sigma2 must be finite and nonnegative".into()));
        }
        if !self.gamma.is_finite() {
            return Err(KdbError::InvalidArgument("gamma must be finite".into()));
        }
        Ok(())
    }
}

const ETA: [f64; 4] = [-1.0, 0.5, -0.25, -0.1];
const MU_INTERCEPT: f64 = 210.0;
const MU: [f64; 4] = [27.4, 13.7, 13.7, 13.7];

fn linear(z: &DMatrix<f64>, i: usize, coef: &[f64; 4]) -> f64 {
    coef.iter().enumerate().map(|(j, c)| c * z[(i, j)]).sum()
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Draw one dataset. Only `X` is observed; the standardized `U` is kept
/// as the hidden covariate block.
pub fn kang_schafer_generate(cfg: &KangSchaferConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    kang_schafer_with_rng(cfg, &mut rng)
}

pub(crate) fn kang_schafer_with_rng(cfg: &KangSchaferConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    cfg.validate()?;
    let n = cfg.n;
    let mut x: DMatrix<f64> = DMatrix::zeros(n, 4);
    for i in 0..n {
        for j in 0..4 {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut u = DMatrix::from_fn(n, 4, |i, j| {
        let (x1, x2, x3, x4) = (x[(i, 0)], x[(i, 1)], x[(i, 2)], x[(i, 3)]);
        match j {
            0 => (x1 / 2.0).exp(),
            1 => x2 / (1.0 + x1.exp()) + 10.0,
            2 => (x1 * x3 / 25.0 + 0.6).powi(3),
            _ => (x2 + x4 + 20.0).powi(2),
        }
    });
    standardize_columns(&mut u);
    let zt = if cfg.delta_t == CovariateSet::X { &x } else { &u };
    let zo = if cfg.delta_o == CovariateSet::X { &x } else { &u };

    let sigma = cfg.sigma2_outcome.sqrt();
    let tail = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut treated = Vec::with_capacity(n);
    let (mut y0, mut y1, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut mu = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.gen::<f64>() < logistic(linear(zt, i, &ETA));
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let m = MU_INTERCEPT + linear(zo, i, &MU);
        let a = m + sigma * e1;
        let b = m + cfg.gamma + sigma * (cfg.rho * e1 + tail * e2);
        treated.push(t);
        y.push(if t { b } else { a });
        y0.push(a);
        y1.push(b);
        mu.push(m);
    }
    check_groups(&treated)?;
    let data = validate_dataset(x, &bernoulli_vec(&treated), &y)?.with_potential_outcomes(y0, y1)?;
    Ok(SimulatedData {
        data,
        mu1: mu.iter().map(|m| m + cfg.gamma).collect(),
        mu0: mu,
        hidden: u,
        hidden_names: (1..=4).map(|k| format!("U{k}")).collect(),
        tau: cfg.gamma,
    })
}
