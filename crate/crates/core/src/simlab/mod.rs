//! Simulation designs, Monte Carlo and bootstrap runners.

mod bootstrap;
mod kang_schafer;
mod montecarlo;
mod sim2;

pub use bootstrap::{bootstrap, BootstrapConfig, Resampling};
pub use kang_schafer::{kang_schafer_generate, CovariateSet, KangSchaferConfig};
pub use montecarlo::{
    method_weights, monte_carlo, Design, MethodKind, MethodSpec, MethodSummary, MonteCarloConfig, MonteCarloSummary,
    RepMethodResult, ReplicationResult,
};
pub use sim2::{sim2_generate, Sim2Config};

use nalgebra::DMatrix;

use crate::error::{KdbError, Result};
use crate::model::{BalanceWeights, Dataset};

/// A generated dataset together with the quantities only a simulation knows.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Observed covariates, treatment, outcome and both potential outcomes.
    pub data: Dataset,
    /// `E[Y(0) | X]` per unit.
    pub mu0: Vec<f64>,
    /// `E[Y(1) | X]` per unit.
    pub mu1: Vec<f64>,
    /// Unobserved covariates, one row per unit.
    pub hidden: DMatrix<f64>,
    pub hidden_names: Vec<String>,
    /// Population treatment effect.
    pub tau: f64,
}

impl SimulatedData {
    pub fn bias_terms(&self, w: &BalanceWeights) -> Result<BiasTerms> {
        bias_decomposition(&self.data, &self.mu0, &self.mu1, w, self.tau)
    }

    /// The hidden covariates as a dataset sharing this one's treatment and
    /// outcome, for balance checks on unobserved columns.
    pub fn hidden_dataset(&self) -> Result<Dataset> {
        let t: Vec<f64> = self.data.treatment().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        crate::model::validate_dataset(self.hidden.clone(), &t, self.data.y())
    }
}

/// The three summands of the weighted estimator's error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTerms {
    /// Treated-weighted effect heterogeneity minus the target.
    pub effect: f64,
    /// Weighted imbalance of the control regression function.
    pub imbalance: f64,
    /// Weighted residual noise.
    pub noise: f64,
}

impl BiasTerms {
    pub fn total(&self) -> f64 {
        self.effect + self.imbalance + self.noise
    }
}

/// Split `τ̂ - τ` into effect, imbalance and noise terms given the true
/// regression functions evaluated at each unit.
pub fn bias_decomposition(
    data: &Dataset,
    mu0: &[f64],
    mu1: &[f64],
    w: &BalanceWeights,
    tau: f64,
) -> Result<BiasTerms> {
    if mu0.is_empty() || mu1.is_empty() {
        return Err(KdbError::MissingPotentialOutcomes);
    }
    if mu0.len() != data.n() || mu1.len() != data.n() {
        return Err(KdbError::DimensionMismatch(format!(
            "regression functions need {} values per arm",
            data.n()
        )));
    }
    w.check_dims(data)?;
    let y = data.y();
    let (mut effect, mut imbalance, mut noise) = (0.0, 0.0, 0.0);
    for (&i, &p) in data.treated_indices().iter().zip(&w.p) {
        effect += p * (mu1[i] - mu0[i]);
        imbalance += p * mu0[i];
        noise += p * (y[i] - mu1[i]);
    }
    for (&j, &q) in data.control_indices().iter().zip(&w.q) {
        imbalance -= q * mu0[j];
        noise -= q * (y[j] - mu0[j]);
    }
    Ok(BiasTerms { effect: effect - tau, imbalance, noise })
}

/// Center each column and scale it to unit sample variance. Constant
/// columns are only centered.
pub(crate) fn standardize_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        col.iter_mut().for_each(|v| *v -= mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
        if var > 0.0 {
            let sd = var.sqrt();
            col.iter_mut().for_each(|v| *v /= sd);
        }
    }
}

pub(crate) fn bernoulli_vec(treated: &[bool]) -> Vec<f64> {
    treated.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub(crate) fn check_groups(treated: &[bool]) -> Result<()> {
    if !treated.iter().any(|&b| b) {
        return Err(KdbError::DegenerateAssignment { group: "treated" });
    }
    if treated.iter().all(|&b| b) {
        return Err(KdbError::DegenerateAssignment { group: "control" });
    }
    Ok(())
}
