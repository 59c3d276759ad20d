//! Benchmark estimators: oracle, unadjusted and inverse probability
//! weighting with a logistic propensity model.

use nalgebra::{DMatrix, DVector};

use crate::error::{KdbError, Result};
use crate::model::{BalanceWeights, Dataset, WeightScheme};

pub const PROPENSITY_CLIP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;

/// Logistic regression of treatment on `(1, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    /// Clipped fitted probabilities in the dataset's row order.
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub perfect_separation: bool,
    /// Log-likelihood after each accepted Newton step, starting at zero
    /// coefficients.
    pub loglik_trace: Vec<f64>,
}

fn clip(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^eta) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn design(data: &Dataset) -> DMatrix<f64> {
    let (n, d) = (data.n(), data.d());
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j - 1)] })
}

fn loglik(x: &DMatrix<f64>, t: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(t).map(|(e, ti)| ti * e - softplus(*e)).sum()
}

/// `loglik(cand) - loglik(beta)` summed term by term, so that the tiny
/// gains of late Newton steps are not lost to cancellation.
fn loglik_gain(x: &DMatrix<f64>, t: &[f64], beta: &DVector<f64>, cand: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let dv = x * (cand - beta);
    eta.iter()
        .zip(dv.iter())
        .zip(t)
        .map(|((&e, &d), &ti)| ti * d - (sigmoid(e) * d.exp_m1()).ln_1p())
        .sum()
}

impl PropensityModel {
    /// Clipped probability for one covariate row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let eta = self.coefficients[0]
            + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>();
        clip(sigmoid(eta))
    }
}

/// Maximum-likelihood fit by Newton–Raphson with step halving.
pub fn fit_propensity_logistic(data: &Dataset) -> Result<PropensityModel> {
    let x = design(data);
    let t: Vec<f64> = data.treatment().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let k = x.ncols();
    let mut beta = DVector::zeros(k);
    let mut ll = loglik(&x, &t, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;
    while iterations < MAX_NEWTON {
        let eta = &x * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(t.len(), t.iter().zip(&p).map(|(a, b)| a - b));
        let grad = x.tr_mul(&resid);
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut h = DMatrix::zeros(k, k);
        for i in 0..x.nrows() {
            let w = p[i] * (1.0 - p[i]);
            if w == 0.0 {
                continue;
            }
            for a in 0..k {
                let xa = x[(i, a)] * w;
                for b in 0..=a {
                    h[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let svd = h.svd(true, true);
                let tol = 1e-12 * svd.singular_values.max().max(1e-300);
                svd.solve(&grad, tol).unwrap_or_else(|_| DVector::zeros(k))
            }
        };
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * s;
            let gain = loglik_gain(&x, &t, &beta, &cand);
            if gain.is_finite() && gain >= 0.0 {
                beta = cand;
                ll += gain;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
        if beta.amax() > SEPARATION_BOUND {
            separation = true;
            break;
        }
    }
    let fitted: Vec<f64> = (x.clone() * &beta).iter().map(|&e| clip(sigmoid(e))).collect();
    Ok(PropensityModel {
        coefficients: beta.iter().copied().collect(),
        fitted,
        converged: converged && !separation,
        iterations,
        perfect_separation: separation,
        loglik_trace: trace,
    })
}

fn check_model(model: &PropensityModel, data: &Dataset) -> Result<()> {
    if model.fitted.len() != data.n() {
        return Err(KdbError::DimensionMismatch(format!(
            "model has {} fitted values, dataset has {} units",
            model.fitted.len(),
            data.n()
        )));
    }
    Ok(())
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Normalized `1/e` treated weights and `1/(1-e)` control weights.
pub fn ipw_ate_weights(model: &PropensityModel, data: &Dataset) -> Result<BalanceWeights> {
    check_model(model, data)?;
    let e = &model.fitted;
    let p = normalized(data.treated_indices().iter().map(|&i| 1.0 / e[i]).collect());
    let q = normalized(data.control_indices().iter().map(|&i| 1.0 / (1.0 - e[i])).collect());
    BalanceWeights::new(p, q, WeightScheme::IpwAte, 0.0)
}

/// `p = 1/n1`, `q_j = e_j / (n1 (1 - e_j))`, left unnormalized.
pub fn ipw_att_weights(model: &PropensityModel, data: &Dataset) -> Result<BalanceWeights> {
    check_model(model, data)?;
    let n1 = data.n1() as f64;
    let e = &model.fitted;
    let q = data.control_indices().iter().map(|&i| e[i] / (n1 * (1.0 - e[i]))).collect();
    BalanceWeights::new(vec![1.0 / n1; data.n1()], q, WeightScheme::IpwAtt, 0.0)
}

/// Odds weights rescaled so the control side sums to one.
pub fn ipw_att_weights_normalized(model: &PropensityModel, data: &Dataset) -> Result<BalanceWeights> {
    let w = ipw_att_weights(model, data)?;
    BalanceWeights::new(w.p, normalized(w.q), WeightScheme::IpwAttNormalized, 0.0)
}

/// Uniform weights within each group.
pub fn unadjusted_weights(data: &Dataset) -> BalanceWeights {
    BalanceWeights {
        p: vec![1.0 / data.n1() as f64; data.n1()],
        q: vec![1.0 / data.n0() as f64; data.n0()],
        scheme: WeightScheme::Unadjusted,
        lambda: 0.0,
    }
}

fn potential(data: &Dataset) -> Result<(&[f64], &[f64])> {
    match (data.y0(), data.y1()) {
        (Some(y0), Some(y1)) => Ok((y0, y1)),
        _ => Err(KdbError::MissingPotentialOutcomes),
    }
}

/// `mean(Y1 - Y0)` over all units.
pub fn oracle_ate(data: &Dataset) -> Result<f64> {
    let (y0, y1) = potential(data)?;
    Ok(y1.iter().zip(y0).map(|(a, b)| a - b).sum::<f64>() / data.n() as f64)
}

/// `mean(Y1 - Y0)` over treated units.
pub fn oracle_att(data: &Dataset) -> Result<f64> {
    let (y0, y1) = potential(data)?;
    let idx = data.treated_indices();
    Ok(idx.iter().map(|&i| y1[i] - y0[i]).sum::<f64>() / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancing::{estimate_ate, estimate_att};
    use crate::model::validate_dataset;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn model_with(fitted: Vec<f64>) -> PropensityModel {
        PropensityModel {
            coefficients: vec![0.0, 0.0],
            fitted,
            converged: true,
            iterations: 0,
            perfect_separation: false,
            loglik_trace: vec![],
        }
    }

    fn ds(x: &[f64], t: &[f64], y: &[f64]) -> Dataset {
        validate_dataset(DMatrix::from_column_slice(x.len(), 1, x), t, y).unwrap()
    }

    fn logistic_sample(seed: u64, n: usize, beta: (f64, f64)) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| if rng.gen::<f64>() < sigmoid(beta.0 + beta.1 * v) { 1.0 } else { 0.0 })
            .collect();
        ds(&x, &t, &vec![0.0; n])
    }

    #[test]
    fn independent_covariate_gives_flat_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let d = ds(&x, &t, &vec![0.0; n]);
        let m = fit_propensity_logistic(&d).unwrap();
        assert!(m.converged);
        assert!(m.coefficients[0].abs() < 0.1);
        assert!(m.coefficients[1].abs() < 0.1);
    }

    #[test]
    fn recovers_known_coefficients() {
        let d = logistic_sample(2, 5000, (0.0, 1.0));
        let m = fit_propensity_logistic(&d).unwrap();
        assert!(m.converged);
        assert!(m.coefficients[0].abs() < 0.15);
        assert!((m.coefficients[1] - 1.0).abs() < 0.15);
        for w in m.loglik_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn perfect_separation_is_flagged() {
        let d = ds(&[-2.0, -1.0, -0.5, 0.5, 1.0, 2.0], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[0.0; 6]);
        let m = fit_propensity_logistic(&d).unwrap();
        assert!(!m.converged);
        assert!(m.perfect_separation);
        assert!(m.fitted.iter().all(|&p| (PROPENSITY_CLIP..=1.0 - PROPENSITY_CLIP).contains(&p)));
    }

    #[test]
    fn ipw_ate_examples() {
        let d = ds(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 0.0, 0.0, 0.0], &[0.0; 5]);
        let w = ipw_ate_weights(&model_with(vec![0.5; 5]), &d).unwrap();
        assert_eq!(w.p, vec![0.5, 0.5]);
        for v in &w.q {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let w = ipw_ate_weights(&model_with(vec![0.8, 0.2, 0.3, 0.6, 0.1]), &d).unwrap();
        assert_abs_diff_eq!(w.p[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(w.p[1], 0.8, epsilon = 1e-15);
        assert!((w.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((w.q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ipw_att_examples() {
        let d = ds(&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.0, 0.0, 0.0], &[0.0; 4]);
        let w = ipw_att_weights(&model_with(vec![0.5; 4]), &d).unwrap();
        assert_eq!(w.q, vec![0.5, 0.5]);
        assert_eq!(w.q.iter().sum::<f64>(), 2.0 / 2.0);
        let w = ipw_att_weights(&model_with(vec![0.5, 0.5, 0.75, 0.6]), &d).unwrap();
        assert_abs_diff_eq!(w.q[0], 1.5, epsilon = 1e-15);
        assert!(w.q[0] > w.q[1]);
        let wn = ipw_att_weights_normalized(&model_with(vec![0.5, 0.5, 0.75, 0.6]), &d).unwrap();
        assert_abs_diff_eq!(wn.q.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_propensity_matches_unadjusted() {
        let d = ds(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 1.0, 0.0, 0.0], &[3.0, 1.0, 5.0, 2.0, 0.5]);
        let w = ipw_ate_weights(&model_with(vec![0.3; 5]), &d).unwrap();
        let u = unadjusted_weights(&d);
        assert_eq!(estimate_ate(&d, &w).unwrap(), estimate_ate(&d, &u).unwrap());
        assert_abs_diff_eq!(estimate_ate(&d, &u).unwrap(), 4.0 - 3.5 / 3.0, epsilon = 1e-14);
        assert_eq!(estimate_att(&d, &u).unwrap(), estimate_ate(&d, &u).unwrap());
    }

    #[test]
    fn unadjusted_is_uniform_and_permutation_invariant() {
        let d = ds(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0, 1.0, 0.0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(unadjusted_weights(&d).p, vec![0.25; 4]);
        let perm = d.select_rows(&[4, 2, 0, 3, 1]).unwrap();
        assert_eq!(
            estimate_ate(&d, &unadjusted_weights(&d)).unwrap(),
            estimate_ate(&perm, &unadjusted_weights(&perm)).unwrap()
        );
    }

    #[test]
    fn oracle_examples() {
        let d = ds(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.0], &[21.0, 2.0, 3.0])
            .with_potential_outcomes(vec![1.0, 2.0, 3.0], vec![21.0, 22.0, 23.0])
            .unwrap();
        assert_eq!(oracle_ate(&d).unwrap(), 20.0);
        assert_eq!(oracle_att(&d).unwrap(), oracle_ate(&d).unwrap());
        let d = ds(&[0.0, 1.0], &[1.0, 0.0], &[3.0, 0.0])
            .with_potential_outcomes(vec![1.0, 0.0], vec![3.0, 5.0])
            .unwrap();
        assert_eq!(oracle_att(&d).unwrap(), 2.0);
        let plain = ds(&[0.0, 1.0], &[1.0, 0.0], &[3.0, 0.0]);
        assert_eq!(oracle_ate(&plain), Err(KdbError::MissingPotentialOutcomes));
    }
}
