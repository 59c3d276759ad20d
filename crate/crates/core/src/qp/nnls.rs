//! Lawson–Hanson nonnegative least squares, used to find a first feasible
//! point for the active-set phase.

use nalgebra::{DMatrix, DVector};

pub(crate) struct NnlsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
}

fn ls_on(e: &DMatrix<f64>, f: &DVector<f64>, passive: &[usize]) -> Vec<f64> {
    let ep = e.select_columns(passive.iter());
    let svd = ep.svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(1.0);
    match svd.solve(f, tol) {
        Ok(z) => z.iter().copied().collect(),
        Err(_) => vec![0.0; passive.len()],
    }
}

/// Minimize `||E x - f||` subject to `x >= 0`.
pub(crate) fn nnls(e: &DMatrix<f64>, f: &[f64], max_iter: usize) -> NnlsResult {
    let (m, n) = e.shape();
    let fv = DVector::from_column_slice(f);
    let mut x = vec![0.0; n];
    let mut in_p = vec![false; n];
    let scale = e.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0) * fv.amax().max(1.0);
    let tol = 1e-12 * scale * (m.max(n) as f64);
    let mut iterations = 0;

    let residual_vec = |x: &[f64]| -> DVector<f64> { &fv - e * DVector::from_column_slice(x) };

    loop {
        if iterations >= max_iter {
            break;
        }
        let r = residual_vec(&x);
        let w = e.tr_mul(&r);
        let mut best = None;
        for j in 0..n {
            if !in_p[j] && w[j] > tol && best.map_or(true, |(_, b)| w[j] > b) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        in_p[t] = true;

        loop {
            iterations += 1;
            let passive: Vec<usize> = (0..n).filter(|&j| in_p[j]).collect();
            let z = ls_on(e, &fv, &passive);
            if z.iter().all(|&v| v > 0.0) {
                for j in 0..n {
                    x[j] = 0.0;
                }
                for (k, &j) in passive.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let a = x[j] / (x[j] - z[k]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (k, &j) in passive.iter().enumerate() {
                x[j] += alpha * (z[k] - x[j]);
            }
            let mut removed = false;
            for &j in &passive {
                if x[j] <= tol * 1e-3 {
                    x[j] = 0.0;
                    in_p[j] = false;
                    removed = true;
                }
            }
            if !removed || !in_p.iter().any(|&b| b) || iterations >= max_iter {
                break;
            }
        }
        if t < n && !in_p[t] && x[t] == 0.0 {
            // The newly added column could not enter; its gradient is
            // only numerically positive.
            break;
        }
    }
    NnlsResult { x, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(e: &DMatrix<f64>, f: &[f64], x: &[f64]) -> f64 {
        (DVector::from_column_slice(f) - e * DVector::from_column_slice(x)).norm()
    }

    #[test]
    fn simplex_point() {
        let e = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let r = nnls(&e, &[1.0, 1.0], 100);
        assert!(residual(&e, &[1.0, 1.0], &r.x) < 1e-12);
        assert!(r.x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn unattainable_target() {
        let e = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let r = nnls(&e, &[-1.0], 100);
        assert!(r.x.iter().all(|&v| v == 0.0));
        assert!((residual(&e, &[-1.0], &r.x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_known_solution() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let r = nnls(&e, &[1.0, -1.0, 0.5], 100);
        // Unconstrained optimum has x2 < 0; the constrained one pins x2 = 0.
        assert!((r.x[0] - 0.75).abs() < 1e-12);
        assert_eq!(r.x[1], 0.0);
    }
}
