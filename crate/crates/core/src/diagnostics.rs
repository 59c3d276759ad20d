//! Balance statistics and estimator metrics.
//!
//! Weights are treated as probability masses: each side is normalized to
//! sum to one before computing weighted means, ECDFs and variances.

use crate::error::{KdbError, Result};
use crate::kernel::{rw_stat, Bandwidth};
use crate::model::{BalanceReport, BalanceWeights, Dataset, EstimateReport, Target};

/// Values with nonnegative masses normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    masses: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(KdbError::EmptySample);
        }
        if values.len() != masses.len() {
            return Err(KdbError::DimensionMismatch(format!(
                "{} values but {} masses",
                values.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(KdbError::InvalidArgument("masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(KdbError::InvalidArgument("masses sum to zero".into()));
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(WeightedSample { values, masses })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.masses).map(|(v, m)| v * m).sum()
    }

    /// `Σ w (x - x̄)² / (1 - Σ w²)`; zero when one unit carries all mass.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.values.iter().zip(&self.masses).map(|(v, w)| w * (v - m) * (v - m)).sum();
        let denom = 1.0 - self.masses.iter().map(|w| w * w).sum::<f64>();
        if denom <= 1e-15 {
            0.0
        } else {
            ss / denom
        }
    }

    /// Kish effective sample size `1 / Σ w²`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.masses.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Right-continuous step function of a weighted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEcdf {
    points: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedEcdf {
    /// Mass at or below `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&p| p <= x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Distinct support points with the cumulative mass at each.
    pub fn breakpoints(&self) -> Vec<(f64, f64)> {
        self.points.iter().copied().zip(self.cumulative.iter().copied()).collect()
    }

    /// Smallest support point whose cumulative mass reaches `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < u - 1e-15);
        self.points[k.min(self.points.len() - 1)]
    }
}

pub fn weighted_ecdf(s: &WeightedSample) -> WeightedEcdf {
    let mut idx: Vec<usize> = (0..s.values.len()).collect();
    idx.sort_by(|&a, &b| s.values[a].total_cmp(&s.values[b]));
    let mut points = Vec::new();
    let mut cumulative: Vec<f64> = Vec::new();
    let mut acc = 0.0;
    for i in idx {
        acc += s.masses[i];
        if points.last() == Some(&s.values[i]) {
            *cumulative.last_mut().unwrap() = acc;
        } else {
            points.push(s.values[i]);
            cumulative.push(acc);
        }
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    WeightedEcdf { points, cumulative }
}

/// Two-sample Kolmogorov–Smirnov distance between weighted ECDFs,
/// evaluated at every pooled support point.
pub fn ks_statistic(a: &WeightedSample, b: &WeightedSample) -> f64 {
    let fa = weighted_ecdf(a);
    let fb = weighted_ecdf(b);
    a.values
        .iter()
        .chain(&b.values)
        .map(|&x| (fa.eval(x) - fb.eval(x)).abs())
        .fold(0.0, f64::max)
}

fn check_d(data: &Dataset, d: usize) -> Result<()> {
    if d >= data.d() {
        return Err(KdbError::InvalidArgument(format!(
            "covariate index {d} out of range for {} covariates",
            data.d()
        )));
    }
    Ok(())
}

/// Weighted treated and control samples of covariate `d`.
pub fn group_samples(data: &Dataset, w: &BalanceWeights, d: usize) -> Result<(WeightedSample, WeightedSample)> {
    w.check_dims(data)?;
    check_d(data, d)?;
    Ok((
        WeightedSample::new(data.treated_column(d), w.p.clone())?,
        WeightedSample::new(data.control_column(d), w.q.clone())?,
    ))
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// `|x̄₁ᵖ - x̄₀ᑫ| / sqrt((S₁² + S₀²)/2)` with unweighted group variances.
pub fn asmd_ate(data: &Dataset, w: &BalanceWeights, d: usize) -> Result<f64> {
    let (t, c) = group_samples(data, w, d)?;
    let denom = ((sample_var(t.values()) + sample_var(c.values())) / 2.0).sqrt();
    if denom == 0.0 {
        return Err(KdbError::ZeroVariance { covariate: d });
    }
    Ok((t.mean() - c.mean()).abs() / denom)
}

/// `|x̄₁ᵖ - x̄₀ᑫ| / sd(X₁)` using the treated-group standard deviation.
pub fn asmd_att(data: &Dataset, w: &BalanceWeights, d: usize) -> Result<f64> {
    let (t, c) = group_samples(data, w, d)?;
    let sd = sample_var(t.values()).sqrt();
    if sd == 0.0 {
        return Err(KdbError::ZeroVariance { covariate: d });
    }
    Ok((t.mean() / sd - c.mean() / sd).abs())
}

/// Average KS distance over covariates.
pub fn mean_ks(data: &Dataset, w: &BalanceWeights) -> Result<f64> {
    let mut s = 0.0;
    for d in 0..data.d() {
        let (t, c) = group_samples(data, w, d)?;
        s += ks_statistic(&t, &c);
    }
    Ok(s / data.d() as f64)
}

/// Welch statistic for covariate `d` with weighted means and variances.
pub fn welch_t(data: &Dataset, w: &BalanceWeights, d: usize) -> Result<f64> {
    if data.n1() < 2 || data.n0() < 2 {
        return Err(KdbError::InvalidArgument("Welch statistic needs two units per group".into()));
    }
    let (t, c) = group_samples(data, w, d)?;
    let se2 = t.variance() / data.n1() as f64 + c.variance() / data.n0() as f64;
    if se2 <= 0.0 {
        return Err(KdbError::ZeroVariance { covariate: d });
    }
    Ok((t.mean() - c.mean()) / se2.sqrt())
}

/// Signed average of the per-covariate Welch statistics.
pub fn mean_t(data: &Dataset, w: &BalanceWeights) -> Result<f64> {
    let mut s = 0.0;
    for d in 0..data.d() {
        s += welch_t(data, w, d)?;
    }
    Ok(s / data.d() as f64)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// ASMD of every covariate using the variant matching the weights' target.
pub fn per_covariate_asmd(data: &Dataset, w: &BalanceWeights) -> Result<Vec<f64>> {
    (0..data.d())
        .map(|d| match w.scheme.target() {
            Target::Ate => asmd_ate(data, w, d),
            Target::Att => asmd_att(data, w, d),
        })
        .collect()
}

pub fn balance_report(data: &Dataset, w: &BalanceWeights, bw: Bandwidth) -> Result<BalanceReport> {
    let rw = rw_stat(data, w, bw)?;
    let asmd = per_covariate_asmd(data, w)?;
    Ok(BalanceReport {
        rw,
        kd: rw.max(0.0).sqrt(),
        max_asmd: asmd.iter().copied().fold(0.0, f64::max),
        mean_asmd: asmd.iter().sum::<f64>() / asmd.len() as f64,
        med_asmd: median(&asmd),
        per_covariate_asmd: asmd,
        mean_ks: mean_ks(data, w)?,
        mean_t: mean_t(data, w)?,
    })
}

/// Bias, %Bias, SD and RMSE of replicated estimates around `truth`.
pub fn estimator_metrics(method: &str, estimates: &[f64], truth: f64) -> Result<EstimateReport> {
    let n = estimates.len();
    if n < 2 {
        return Err(KdbError::TooFewEstimates { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = estimates.iter().sum::<f64>() / nf;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (nf - 1.0);
    let std = var.sqrt();
    let bias = mean - truth;
    let pct_bias = if bias == 0.0 { 0.0 } else { 100.0 * bias / std };
    let rmse = (estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / nf).sqrt();
    Ok(EstimateReport {
        method: method.to_string(),
        estimates: estimates.to_vec(),
        mean,
        bias,
        pct_bias,
        sd: std / nf.sqrt(),
        rmse,
        truth,
    })
}

/// Silverman's rule using the weighted spread and Kish effective size.
pub fn silverman_bandwidth(s: &WeightedSample) -> Result<f64> {
    let sd = s.variance().sqrt();
    let f = weighted_ecdf(s);
    let iqr = f.quantile(0.75) - f.quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * s.effective_size().powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(KdbError::InvalidBandwidth(h))
    }
}

/// Weighted Gaussian kernel density evaluated on `grid`.
pub fn weighted_density_series(s: &WeightedSample, grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(KdbError::InvalidBandwidth(h)),
        None => silverman_bandwidth(s)?,
    };
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            s.values
                .iter()
                .zip(&s.masses)
                .map(|(v, w)| {
                    let z = (g - v) / h;
                    w * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, WeightScheme};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn ds(x: &[f64], t: &[f64]) -> Dataset {
        validate_dataset(DMatrix::from_column_slice(x.len(), 1, x), t, &vec![0.0; x.len()]).unwrap()
    }

    fn bw(p: Vec<f64>, q: Vec<f64>, s: WeightScheme) -> BalanceWeights {
        BalanceWeights { p, q, scheme: s, lambda: 0.0 }
    }

    fn two_by_two() -> Dataset {
        ds(&[0.0, 2.0, 1.0, 3.0], &[1.0, 1.0, 0.0, 0.0])
    }

    #[test]
    fn asmd_ate_example() {
        let w = bw(vec![0.5, 0.5], vec![0.5, 0.5], WeightScheme::Unadjusted);
        assert_abs_diff_eq!(asmd_ate(&two_by_two(), &w, 0).unwrap(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn asmd_att_example_and_relation() {
        let d = two_by_two();
        let w = bw(vec![0.5, 0.5], vec![0.0, 1.0], WeightScheme::AttKdbc);
        assert_abs_diff_eq!(asmd_att(&d, &w, 0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        let ate = asmd_ate(&d, &w, 0).unwrap();
        // Both groups have variance 2, so the pooled and treated sd agree.
        assert_abs_diff_eq!(ate, asmd_att(&d, &w, 0).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn constant_covariate_has_zero_variance() {
        let d = ds(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 0.0, 0.0]);
        let w = bw(vec![0.5, 0.5], vec![0.5, 0.5], WeightScheme::Unadjusted);
        assert_eq!(asmd_ate(&d, &w, 0), Err(KdbError::ZeroVariance { covariate: 0 }));
        assert_eq!(asmd_att(&d, &w, 0), Err(KdbError::ZeroVariance { covariate: 0 }));
    }

    #[test]
    fn ecdf_examples() {
        let f = weighted_ecdf(&WeightedSample::new(vec![2.0], vec![1.0]).unwrap());
        assert_eq!((f.eval(1.999), f.eval(2.0), f.eval(5.0)), (0.0, 1.0, 1.0));
        let f = weighted_ecdf(&WeightedSample::new(vec![1.0, 2.0], vec![0.25, 0.75]).unwrap());
        assert_eq!(f.eval(1.5), 0.25);
        assert_eq!(f.eval(f64::NEG_INFINITY), 0.0);
        assert_eq!(f.eval(f64::INFINITY), 1.0);
    }

    #[test]
    fn ks_examples() {
        let d = ds(&[0.0, 1.0, 0.0, 1.0], &[1.0, 1.0, 0.0, 0.0]);
        let u = bw(vec![0.5, 0.5], vec![0.5, 0.5], WeightScheme::Unadjusted);
        assert_eq!(mean_ks(&d, &u).unwrap(), 0.0);
        let d = ds(&[0.0, 1.0, 5.0, 6.0], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(mean_ks(&d, &u).unwrap(), 1.0);
        let d = ds(&[0.0, 1.0, 0.5], &[1.0, 1.0, 0.0]);
        let w = bw(vec![0.5, 0.5], vec![1.0], WeightScheme::Unadjusted);
        assert_eq!(mean_ks(&d, &w).unwrap(), 0.5);
    }

    #[test]
    fn welch_examples() {
        let u = bw(vec![0.5, 0.5], vec![0.5, 0.5], WeightScheme::Unadjusted);
        let t = welch_t(&two_by_two(), &u, 0).unwrap();
        assert_abs_diff_eq!(t, -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        let swapped = ds(&[0.0, 2.0, 1.0, 3.0], &[0.0, 0.0, 1.0, 1.0]);
        assert_abs_diff_eq!(welch_t(&swapped, &u, 0).unwrap(), -t, epsilon = 1e-15);
        let bal = ds(&[0.0, 2.0, 1.0, 1.0, 0.5, 1.5], &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = bw(vec![0.5, 0.5], vec![0.25; 4], WeightScheme::Unadjusted);
        assert_eq!(mean_t(&bal, &w).unwrap(), 0.0);
    }

    #[test]
    fn metrics_examples() {
        let r = estimator_metrics("x", &[20.0, 20.0, 20.0], 20.0).unwrap();
        assert_eq!((r.bias, r.rmse, r.pct_bias), (0.0, 0.0, 0.0));
        let r = estimator_metrics("x", &[19.0, 21.0], 20.0).unwrap();
        assert_eq!(r.bias, 0.0);
        assert_abs_diff_eq!(r.rmse, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.sd, 1.0, epsilon = 1e-15);
        assert_eq!(estimator_metrics("x", &[1.0], 0.0), Err(KdbError::TooFewEstimates { needed: 2, got: 1 }));
    }

    #[test]
    fn density_examples() {
        let grid: Vec<f64> = (0..=800).map(|i| -4.0 + i as f64 * 0.01).collect();
        let s = WeightedSample::new(vec![0.0], vec![1.0]).unwrap();
        let f = weighted_density_series(&s, &grid, Some(0.5)).unwrap();
        let peak = f.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_abs_diff_eq!(grid[peak.0], 0.0, epsilon = 1e-12);

        let vals = vec![-0.3, 0.1, 0.4, 0.9];
        let u = WeightedSample::uniform(vals.clone()).unwrap();
        let h = silverman_bandwidth(&u).unwrap();
        let f = weighted_density_series(&u, &[0.2], Some(h)).unwrap();
        let direct: f64 = vals
            .iter()
            .map(|v| (-0.5 * ((0.2 - v) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()))
            .sum::<f64>()
            / 4.0;
        assert_abs_diff_eq!(f[0], direct, epsilon = 1e-15);

        let w = WeightedSample::new(vec![-1.0, 0.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let h = silverman_bandwidth(&w).unwrap();
        let lo = -1.0 - 4.0 * h;
        let hi = 2.0 + 4.0 * h;
        let m = 4000;
        let g: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
        let f = weighted_density_series(&w, &g, None).unwrap();
        let dx = (hi - lo) / m as f64;
        let integral: f64 = f.windows(2).map(|p| 0.5 * (p[0] + p[1]) * dx).sum();
        assert!((0.99..=1.01).contains(&integral), "{integral}");
        assert_eq!(WeightedSample::new(vec![], vec![]), Err(KdbError::EmptySample));
    }

    proptest! {
        #[test]
        fn rmse_identity(est in proptest::collection::vec(-50.0..50.0f64, 2..40), truth in -10.0..10.0f64) {
            let r = estimator_metrics("m", &est, truth).unwrap();
            let n = est.len() as f64;
            let var = (r.sd * n.sqrt()).powi(2);
            let rhs = r.bias * r.bias + (n - 1.0) / n * var;
            prop_assert!((r.rmse * r.rmse - rhs).abs() <= 1e-10 * (1.0 + rhs));
            prop_assert!(r.sd >= 0.0);
            prop_assert!(r.rmse >= r.bias.abs() - 1e-12);
        }

        #[test]
        fn ks_in_unit_interval_and_attained_at_pooled_points(
            a in proptest::collection::vec(-3.0..3.0f64, 1..12),
            b in proptest::collection::vec(-3.0..3.0f64, 1..12),
        ) {
            let sa = WeightedSample::uniform(a.clone()).unwrap();
            let sb = WeightedSample::uniform(b.clone()).unwrap();
            let ks = ks_statistic(&sa, &sb);
            prop_assert!((0.0..=1.0).contains(&ks));
            let (fa, fb) = (weighted_ecdf(&sa), weighted_ecdf(&sb));
            let mut grid_sup: f64 = 0.0;
            for i in 0..=600 {
                let x = -3.5 + i as f64 * 0.01;
                grid_sup = grid_sup.max((fa.eval(x) - fb.eval(x)).abs());
            }
            prop_assert!(grid_sup <= ks + 1e-15);
        }

        #[test]
        fn ecdf_monotone(v in proptest::collection::vec(-3.0..3.0f64, 1..20), m in proptest::collection::vec(0.01..1.0f64, 20)) {
            let s = WeightedSample::new(v.clone(), m[..v.len()].to_vec()).unwrap();
            let f = weighted_ecdf(&s);
            let mut prev = 0.0;
            for i in 0..=70 {
                let x = -3.5 + i as f64 * 0.1;
                let y = f.eval(x);
                prop_assert!(y >= prev);
                prev = y;
            }
        }
    }
}
