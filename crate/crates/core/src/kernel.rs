//! Gaussian kernel, median-heuristic bandwidth, the signed information
//! matrix and the weighted kernel-distance statistics.

use nalgebra::DMatrix;

use crate::error::{KdbError, Result};
use crate::model::{BalanceWeights, Dataset};

/// Denominator of the Gaussian kernel exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    sigma2: f64,
}

impl Bandwidth {
    pub fn new(sigma2: f64) -> Result<Self> {
        if sigma2 > 0.0 && sigma2.is_finite() {
            Ok(Bandwidth { sigma2 })
        } else {
            Err(KdbError::InvalidBandwidth(sigma2))
        }
    }

    pub fn sigma2(self) -> f64 {
        self.sigma2
    }
}

/// How the median of squared distances maps onto `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthRule {
    /// `sigma2 = median` (the usual median heuristic).
    #[default]
    Median,
    /// `sigma2 = median^2`, treating the median itself as sigma.
    MedianSquared,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn kern(a: &[f64], b: &[f64], sigma2: f64) -> f64 {
    (-sq_dist(a, b) / sigma2).exp()
}

/// `exp(-||x - y||^2 / sigma2)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bw: Bandwidth) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KdbError::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(kern(x, y, bw.sigma2))
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

fn median_sorted(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median of the positive pairwise squared distances between rows of `x`.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<Bandwidth> {
    median_bandwidth_with(x, BandwidthRule::Median)
}

pub fn median_bandwidth_with(x: &DMatrix<f64>, rule: BandwidthRule) -> Result<Bandwidth> {
    let n = x.nrows();
    if n < 2 {
        return Err(KdbError::InvalidArgument("median bandwidth needs at least two rows".into()));
    }
    let rows = rows_of(x);
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&rows[i], &rows[j]);
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Err(KdbError::AllPointsIdentical);
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let med = median_sorted(&d);
    let s2 = match rule {
        BandwidthRule::Median => med,
        BandwidthRule::MedianSquared => med * med,
    };
    Bandwidth::new(s2)
}

/// Signed Gaussian Gram matrix in treated-first block order, plus ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub k: DMatrix<f64>,
    pub sigma2: Bandwidth,
    pub lambda: f64,
    /// `ordering[i]` is the block position of original row `i`.
    pub ordering: Vec<usize>,
    pub n1: usize,
}

impl InformationMatrix {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Treated-treated block `K1`.
    pub fn k1(&self) -> DMatrix<f64> {
        self.k.view((0, 0), (self.n1, self.n1)).into_owned()
    }

    /// Control-control block `K0`.
    pub fn k0(&self) -> DMatrix<f64> {
        let n0 = self.n() - self.n1;
        self.k.view((self.n1, self.n1), (n0, n0)).into_owned()
    }

    /// Unsigned cross block `K10` (treated rows, control columns).
    pub fn k10(&self) -> DMatrix<f64> {
        let n0 = self.n() - self.n1;
        -self.k.view((0, self.n1), (self.n1, n0)).into_owned()
    }

    /// Quadratic form `v' K v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let n = self.n();
        let mut s = 0.0;
        for j in 0..n {
            let col = self.k.column(j);
            let mut t = 0.0;
            for i in 0..n {
                t += col[i] * v[i];
            }
            s += t * v[j];
        }
        s
    }
}

/// Unsigned Gram matrix of the units in block order, without ridge.
pub(crate) fn block_gram(data: &Dataset, bw: Bandwidth) -> DMatrix<f64> {
    let order: Vec<usize> = data
        .treated_indices()
        .iter()
        .chain(data.control_indices())
        .copied()
        .collect();
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| data.row(i)).collect();
    let n = rows.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = kern(&rows[i], &rows[j], bw.sigma2);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Build `K_G + lambda I`.
pub fn information_matrix(data: &Dataset, bw: Bandwidth, lambda: f64) -> Result<InformationMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(KdbError::InvalidArgument(format!("lambda {lambda} must be finite and >= 0")));
    }
    let n1 = data.n1();
    let mut k = block_gram(data, bw);
    let n = k.nrows();
    for j in 0..n {
        for i in 0..n {
            if (i < n1) != (j < n1) {
                k[(i, j)] = -k[(i, j)];
            }
        }
        k[(j, j)] += lambda;
    }
    let mut ordering = vec![0; n];
    for (pos, &i) in data.treated_indices().iter().chain(data.control_indices()).enumerate() {
        ordering[i] = pos;
    }
    Ok(InformationMatrix { k, sigma2: bw, lambda, ordering, n1 })
}

/// Weighted squared kernel distance `r^W(p, q)`.
pub fn rw_stat(data: &Dataset, w: &BalanceWeights, bw: Bandwidth) -> Result<f64> {
    w.check_dims(data)?;
    let t: Vec<Vec<f64>> = data.treated_indices().iter().map(|&i| data.row(i)).collect();
    let c: Vec<Vec<f64>> = data.control_indices().iter().map(|&i| data.row(i)).collect();
    let s = bw.sigma2;
    let mut a = 0.0;
    for i in 0..t.len() {
        for j in 0..t.len() {
            a += w.p[i] * w.p[j] * kern(&t[i], &t[j], s);
        }
    }
    let mut b = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            b += w.q[i] * w.q[j] * kern(&c[i], &c[j], s);
        }
    }
    let mut x = 0.0;
    for i in 0..t.len() {
        for j in 0..c.len() {
            x += w.p[i] * w.q[j] * kern(&t[i], &c[j], s);
        }
    }
    Ok(a + b - 2.0 * x)
}

/// `sqrt(max(r^W, 0))`.
pub fn kernel_distance(data: &Dataset, w: &BalanceWeights, bw: Bandwidth) -> Result<f64> {
    Ok(rw_stat(data, w, bw)?.max(0.0).sqrt())
}

/// Value of the normalized witness function at `x`.
pub fn witness_eval(x: &[f64], data: &Dataset, w: &BalanceWeights, bw: Bandwidth) -> Result<f64> {
    if x.len() != data.d() {
        return Err(KdbError::DimensionMismatch(format!(
            "query point has {} coordinates, dataset has {}",
            x.len(),
            data.d()
        )));
    }
    let kd = kernel_distance(data, w, bw)?;
    if kd <= 1e-12 {
        return Err(KdbError::DegenerateWitness);
    }
    let mut f = 0.0;
    for (k, &i) in data.treated_indices().iter().enumerate() {
        f += w.p[k] * kern(x, &data.row(i), bw.sigma2);
    }
    for (k, &i) in data.control_indices().iter().enumerate() {
        f -= w.q[k] * kern(x, &data.row(i), bw.sigma2);
    }
    Ok(f / kd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, WeightScheme};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bw(s: f64) -> Bandwidth {
        Bandwidth::new(s).unwrap()
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn two_point() -> (Dataset, BalanceWeights) {
        let d = validate_dataset(col(&[0.0, 1.0]), &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let w = BalanceWeights::new(vec![1.0], vec![1.0], WeightScheme::Unadjusted, 0.0).unwrap();
        (d, w)
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
        let mut t: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        t[0] = 1.0;
        t[1] = 0.0;
        validate_dataset(x, &t, &vec![0.0; n]).unwrap()
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(&[3.7, -1.0], &[3.7, -1.0], bw(0.3)).unwrap(), 1.0);
        assert_abs_diff_eq!(gaussian_kernel(&[0.0, 0.0], &[1.0, 1.0], bw(2.0)).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_kernel(&[0.0], &[2.0], bw(1.0)).unwrap(), 0.018315638888734179, epsilon = 1e-15);
        assert!(gaussian_kernel(&[0.0], &[2.0, 1.0], bw(1.0)).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_bandwidth(&col(&[0.0, 1.0])).unwrap().sigma2(), 1.0);
        assert_eq!(median_bandwidth(&col(&[0.0, 1.0, 3.0])).unwrap().sigma2(), 4.0);
        assert_eq!(median_bandwidth(&col(&[0.0, 0.0, 2.0])).unwrap().sigma2(), 4.0);
        assert_eq!(median_bandwidth(&col(&[1.0, 1.0])), Err(KdbError::AllPointsIdentical));
        assert_eq!(median_bandwidth(&col(&[0.0, 1.0, 3.0, 7.0])).unwrap().sigma2(), 0.5 * (9.0 + 16.0));
        let lit = median_bandwidth_with(&col(&[0.0, 1.0, 3.0]), BandwidthRule::MedianSquared).unwrap();
        assert_eq!(lit.sigma2(), 16.0);
    }

    #[test]
    fn information_matrix_examples() {
        let d = validate_dataset(col(&[0.5, 0.5]), &[0.0, 1.0], &[0.0, 0.0]).unwrap();
        let k = information_matrix(&d, bw(1.0), 0.0).unwrap();
        assert_eq!(k.k, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(k.ordering, vec![1, 0]);
        let k = information_matrix(&d, bw(1.0), 0.5).unwrap();
        assert_eq!(k.k, DMatrix::from_row_slice(2, 2, &[1.5, -1.0, -1.0, 1.5]));
    }

    #[test]
    fn information_matrix_block_signs_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_dataset(&mut rng, 6, 2);
        let k = information_matrix(&d, median_bandwidth(d.x()).unwrap(), 0.0).unwrap();
        let n1 = d.n1();
        for i in 0..6 {
            assert_eq!(k.k[(i, i)], 1.0);
            for j in 0..6 {
                assert_eq!(k.k[(i, j)], k.k[(j, i)]);
                if (i < n1) == (j < n1) {
                    assert!(k.k[(i, j)] >= 0.0);
                } else {
                    assert!(k.k[(i, j)] <= 0.0);
                }
            }
        }
        let ev = k.k.clone().symmetric_eigenvalues();
        assert!(ev.min() >= -1e-10);
    }

    #[test]
    fn rw_and_kd_examples() {
        let d = validate_dataset(col(&[0.2, 0.2]), &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let w = BalanceWeights::new(vec![1.0], vec![1.0], WeightScheme::Unadjusted, 0.0).unwrap();
        assert_eq!(rw_stat(&d, &w, bw(1.0)).unwrap(), 0.0);
        assert_eq!(kernel_distance(&d, &w, bw(1.0)).unwrap(), 0.0);
        assert_eq!(witness_eval(&[0.2], &d, &w, bw(1.0)), Err(KdbError::DegenerateWitness));

        let (d, w) = two_point();
        let rw = rw_stat(&d, &w, bw(1.0)).unwrap();
        assert_abs_diff_eq!(rw, 1.2642411176571153, epsilon = 1e-12);
        assert_abs_diff_eq!(kernel_distance(&d, &w, bw(1.0)).unwrap(), 1.1243847729568004, epsilon = 1e-12);
        assert_abs_diff_eq!(witness_eval(&[0.0], &d, &w, bw(1.0)).unwrap(), 0.5621923864784001, epsilon = 1e-12);
    }

    #[test]
    fn rw_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dataset(&mut rng, 12, 3);
        let b = median_bandwidth(d.x()).unwrap();
        let p: Vec<f64> = (0..d.n1()).map(|_| rng.gen::<f64>()).collect();
        let q: Vec<f64> = (0..d.n0()).map(|_| rng.gen::<f64>()).collect();
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        let w = BalanceWeights::new(
            p.iter().map(|v| v / sp).collect(),
            q.iter().map(|v| v / sq).collect(),
            WeightScheme::Kdbc,
            0.0,
        )
        .unwrap();
        let k = information_matrix(&d, b, 0.0).unwrap();
        assert_abs_diff_eq!(rw_stat(&d, &w, b).unwrap(), k.quad_form(&w.stacked()), epsilon = 1e-10);
    }

    #[test]
    fn witness_reproducing_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_dataset(&mut rng, 10, 2);
        let b = median_bandwidth(d.x()).unwrap();
        let w = BalanceWeights::new(
            vec![1.0 / d.n1() as f64; d.n1()],
            vec![1.0 / d.n0() as f64; d.n0()],
            WeightScheme::Unadjusted,
            0.0,
        )
        .unwrap();
        let kd = kernel_distance(&d, &w, b).unwrap();
        let mut s = 0.0;
        for (k, &i) in d.treated_indices().iter().enumerate() {
            s += w.p[k] * witness_eval(&d.row(i), &d, &w, b).unwrap();
        }
        for (k, &i) in d.control_indices().iter().enumerate() {
            s -= w.q[k] * witness_eval(&d.row(i), &d, &w, b).unwrap();
        }
        assert_abs_diff_eq!(s, kd, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_symmetric_in_unit_interval(
            x in proptest::collection::vec(-5.0..5.0f64, 3),
            y in proptest::collection::vec(-5.0..5.0f64, 3),
            s in 0.01..10.0f64,
        ) {
            let a = gaussian_kernel(&x, &y, bw(s)).unwrap();
            let b = gaussian_kernel(&y, &x, bw(s)).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0 && a <= 1.0);
        }

        #[test]
        fn kernel_scale_equivariance(
            x in proptest::collection::vec(-3.0..3.0f64, 2),
            y in proptest::collection::vec(-3.0..3.0f64, 2),
            s in 0.1..5.0f64,
            c in 0.1..10.0f64,
        ) {
            let a = gaussian_kernel(&x, &y, bw(s)).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let b = gaussian_kernel(&xs, &ys, bw(s * c * c)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn information_matrix_psd(seed in any::<u64>(), n in 2usize..20, d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_dataset(&mut rng, n, d);
            let k = information_matrix(&ds, median_bandwidth(ds.x()).unwrap(), 0.0).unwrap();
            for _ in 0..5 {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nv: f64 = v.iter().map(|x| x * x).sum();
                prop_assert!(k.quad_form(&v) >= -1e-10 * nv);
            }
        }
    }
}
