//! Second design: group-dependent correlated covariates with hidden
//! interaction and square terms in the outcome model.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{bernoulli_vec, check_groups, standardize_columns, SimulatedData};
use crate::error::{KdbError, Result};
use crate::model::validate_dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct Sim2Config {
    pub n: usize,
    pub p_treat: f64,
    /// Control-group mean shift of `(X1, X2)`.
    pub alpha1: f64,
    /// Control-group covariance bump of `(X1, X2)`.
    pub alpha2: f64,
    /// Outcome coefficient on `X5 = X1 X2`.
    pub alpha3: f64,
    /// Outcome coefficient on `X6 = X3²`.
    pub alpha4: f64,
    pub gamma: f64,
    pub sigma2_outcome: f64,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for Sim2Config {
    fn default() -> Self {
        Sim2Config {
            n: 200,
            p_treat: 0.5,
            alpha1: 0.8,
            alpha2: 0.2,
            alpha3: 1.0,
            alpha4: 2.0,
            gamma: 10.0,
            sigma2_outcome: 10.0,
            lambda_grid: vec![0.0, 1.0, 2.0, 5.0, 10.0, 100.0],
            seed: 0,
        }
    }
}

impl Sim2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(KdbError::InvalidArgument(format!("n must be at least 4, got {}", self.n)));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(KdbError::InvalidArgument(format!("p_treat must lie in (0, 1), got {}", self.p_treat)));
        }
        if !((0.5 + self.alpha2).abs() < 1.0) {
            return Err(KdbError::InvalidArgument(format!(
                "control covariance with alpha2 = {} is not positive definite",
                self.alpha2
            )));
        }
        let finite = [self.alpha1, self.alpha3, self.alpha4, self.gamma].iter().all(|v| v.is_finite());
        if !finite || !(self.sigma2_outcome >= 0.0 && self.sigma2_outcome.is_finite()) {
            return Err(KdbError::InvalidArgument("design parameters must be finite".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(KdbError::InvalidArgument("lambda grid entries must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Treatment flags and the six covariates before standardization.
pub(crate) fn sim2_raw(cfg: &Sim2Config, rng: &mut ChaCha8Rng) -> (Vec<bool>, DMatrix<f64>) {
    let n = cfg.n;
    let mut treated = Vec::with_capacity(n);
    let mut raw = DMatrix::zeros(n, 6);
    for i in 0..n {
        let t = rng.gen::<f64>() < cfg.p_treat;
        let (shift, c) = if t { (0.0, 0.5) } else { (cfg.alpha1, 0.5 + cfg.alpha2) };
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x1 = 1.0 + shift + z1;
        let x2 = 2.0 + shift + c * z1 + (1.0 - c * c).sqrt() * z2;
        let x3: f64 = rng.sample(StandardNormal);
        let x4: f64 = rng.sample(StandardNormal);
        for (j, v) in [x1, x2, x3, x4, x1 * x2, x3 * x3].into_iter().enumerate() {
            raw[(i, j)] = v;
        }
        treated.push(t);
    }
    (treated, raw)
}

/// Draw one dataset. `X1..X4` are observed; standardized `X5, X6` are kept
/// as hidden covariates.
pub fn sim2_generate(cfg: &Sim2Config) -> Result<SimulatedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sim2_with_rng(cfg, &mut rng)
}

pub(crate) fn sim2_with_rng(cfg: &Sim2Config, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    cfg.validate()?;
    let n = cfg.n;
    let (treated, mut z) = sim2_raw(cfg, rng);
    standardize_columns(&mut z);
    let coef = [20.0, 10.0, 5.0, 5.0, cfg.alpha3, cfg.alpha4];
    let sigma = cfg.sigma2_outcome.sqrt();
    let (mut y0, mut y1, mut y, mut mu) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let m: f64 = coef.iter().enumerate().map(|(j, c)| c * z[(i, j)]).sum();
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        y0[i] = m + sigma * e0;
        y1[i] = m + cfg.gamma + sigma * e1;
        y[i] = if treated[i] { y1[i] } else { y0[i] };
        mu[i] = m;
    }
    check_groups(&treated)?;
    let observed = z.columns(0, 4).into_owned();
    let hidden = z.columns(4, 2).into_owned();
    let data = validate_dataset(observed, &bernoulli_vec(&treated), &y)?.with_potential_outcomes(y0, y1)?;
    Ok(SimulatedData {
        data,
        mu1: mu.iter().map(|m| m + cfg.gamma).collect(),
        mu0: mu,
        hidden,
        hidden_names: vec!["X5".into(), "X6".into()],
        tau: cfg.gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_six_columns_standardized() {
        let s = sim2_generate(&Sim2Config { seed: 3, ..Default::default() }).unwrap();
        let n = s.data.n() as f64;
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|j| s.data.x().column(j).iter().copied().collect())
            .chain((0..2).map(|j| s.hidden.column(j).iter().copied().collect()))
            .collect();
        for c in cols {
            let m = c.iter().sum::<f64>() / n;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            assert!(m.abs() <= 1e-12);
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn control_shift_before_standardizing() {
        let cfg = Sim2Config { n: 50_000, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, raw) = sim2_raw(&cfg, &mut rng);
        let mean = |want: bool| {
            let v: Vec<f64> = (0..cfg.n).filter(|&i| t[i] == want).map(|i| raw[(i, 0)]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean(false) - mean(true) - 0.8).abs() <= 0.05);
    }

    #[test]
    fn effect_is_gamma_in_expectation() {
        let s = sim2_generate(&Sim2Config { n: 20_000, seed: 2, ..Default::default() }).unwrap();
        let (y0, y1) = (s.data.y0().unwrap(), s.data.y1().unwrap());
        let eff = y1.iter().zip(y0).map(|(a, b)| a - b).sum::<f64>() / 20_000.0;
        assert!((eff - 10.0).abs() <= 3.0 * 20f64.sqrt() / 20_000f64.sqrt());
        assert_eq!(s.tau, 10.0);
    }

    #[test]
    fn outcome_depends_on_hidden_terms() {
        let cfg = Sim2Config { n: 40, sigma2_outcome: 0.0, seed: 1, ..Default::default() };
        let s = sim2_generate(&cfg).unwrap();
        let x = s.data.x();
        for i in 0..40 {
            let m = 20.0 * x[(i, 0)] + 10.0 * x[(i, 1)] + 5.0 * x[(i, 2)] + 5.0 * x[(i, 3)]
                + s.hidden[(i, 0)]
                + 2.0 * s.hidden[(i, 1)];
            assert!((s.mu0[i] - m).abs() < 1e-12);
            assert_eq!(s.data.y0().unwrap()[i], s.mu0[i]);
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(sim2_generate(&Sim2Config { p_treat: 1.0, ..Default::default() }).is_err());
        assert!(sim2_generate(&Sim2Config { alpha2: 0.5, ..Default::default() }).is_err());
        assert!(sim2_generate(&Sim2Config { lambda_grid: vec![-1.0], ..Default::default() }).is_err());
    }
}
