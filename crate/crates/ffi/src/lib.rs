//! C interface to the balancing library.
//!
//! Datasets and weight vectors are opaque handles owned by the caller and
//! released with the matching `_free` function. Every function returns a
//! [`KdbStatus`]; on failure the message is available from
//! [`kdb_last_error_message`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use kdb::balancing::{estimate, solve_weights, BalanceScheme};
use kdb::baselines::{fit_propensity_logistic, ipw_ate_weights, ipw_att_weights, ipw_att_weights_normalized, unadjusted_weights};
use kdb::diagnostics::balance_report;
use kdb::kernel::{median_bandwidth, rw_stat, Bandwidth};
use kdb::model::{validate_dataset, BalanceWeights, Dataset};
use kdb::KdbError;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidData = 4,
    Infeasible = 5,
    NumericalFailure = 6,
    ZeroVariance = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdbKernelScheme {
    /// Simplex constraints only.
    Kdbc = 0,
    /// Simplex constraints plus first-moment balance.
    Kdm1 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdbTarget {
    Ate = 0,
    Att = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KdbBalanceReport {
    pub rw: f64,
    pub kd: f64,
    pub max_asmd: f64,
    pub mean_asmd: f64,
    pub med_asmd: f64,
    pub mean_ks: f64,
    pub mean_t: f64,
}

/// Opaque dataset handle.
pub struct KdbDataset(Dataset);

/// Opaque weight handle.
pub struct KdbWeights(BalanceWeights);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &KdbError) -> KdbStatus {
    use KdbError::*;
    match e {
        InvalidArgument(_) | InvalidBandwidth(_) | SchemeMismatch { .. } => KdbStatus::InvalidArgument,
        DimensionMismatch(_) => KdbStatus::DimensionMismatch,
        NonBinaryTreatment { .. } | EmptyGroup { .. } | NonFiniteValue { .. } | AllPointsIdentical | EmptySample => {
            KdbStatus::InvalidData
        }
        InfeasibleBalance(_) => KdbStatus::Infeasible,
        RankDeficient { .. } | SingularQ | NumericalBreakdown(_) | DegenerateWitness => KdbStatus::NumericalFailure,
        ZeroVariance { .. } => KdbStatus::ZeroVariance,
        _ => KdbStatus::Other,
    }
}

struct Fail(KdbStatus, String);

impl From<KdbError> for Fail {
    fn from(e: KdbError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KdbStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KdbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KdbStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            KdbStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn dataset<'a>(ds: *const KdbDataset) -> Result<&'a Dataset, Fail> {
    ds.as_ref().map(|d| &d.0).ok_or_else(|| null("dataset"))
}

unsafe fn weights<'a>(w: *const KdbWeights) -> Result<&'a BalanceWeights, Fail> {
    w.as_ref().map(|w| &w.0).ok_or_else(|| null("weights"))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Bandwidth from `sigma2`, or the median heuristic when `sigma2 <= 0`.
fn bandwidth(data: &Dataset, sigma2: f64) -> Result<Bandwidth, Fail> {
    Ok(if sigma2 > 0.0 { Bandwidth::new(sigma2)? } else { median_bandwidth(data.x())? })
}

unsafe fn put_weights(out: *mut *mut KdbWeights, w: BalanceWeights) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(KdbWeights(w))));
    Ok(())
}

/// Build a dataset from `n x d` row-major covariates `x`, a 0/1 treatment
/// vector `t` and outcomes `y`.
///
/// # Safety
/// `x` must point to `n * d` doubles, `t` and `y` to `n` each; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    t: *const f64,
    y: *const f64,
    out: *mut *mut KdbDataset,
) -> KdbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(d).ok_or_else(|| Fail(KdbStatus::InvalidArgument, "n * d overflows".into()))?;
        let xs = slice(x, len, "x")?;
        let ts = slice(t, n, "t")?;
        let ys = slice(y, n, "y")?;
        let data = validate_dataset(DMatrix::from_row_slice(n, d, xs), ts, ys)?;
        out.write(Box::into_raw(Box::new(KdbDataset(data))));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`kdb_dataset_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn kdb_dataset_free(ds: *mut KdbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of units, treated units and covariates.
///
/// # Safety
/// `ds` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_dataset_shape(
    ds: *const KdbDataset,
    n: *mut usize,
    n1: *mut usize,
    d: *mut usize,
) -> KdbStatus {
    guard(|| {
        let data = dataset(ds)?;
        write(n, data.n(), "n")?;
        write(n1, data.n1(), "n1")?;
        write(d, data.d(), "d")
    })
}

/// Median-heuristic `sigma2` for the dataset's covariates.
///
/// # Safety
/// `ds` must be a live handle and `sigma2` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_median_bandwidth(ds: *const KdbDataset, sigma2: *mut f64) -> KdbStatus {
    guard(|| {
        let bw = median_bandwidth(dataset(ds)?.x())?;
        write(sigma2, bw.sigma2(), "sigma2")
    })
}

/// Kernel balancing weights. A `sigma2 <= 0` selects the median heuristic.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_solve_weights(
    ds: *const KdbDataset,
    scheme: KdbKernelScheme,
    target: KdbTarget,
    lambda: f64,
    sigma2: f64,
    out: *mut *mut KdbWeights,
) -> KdbStatus {
    guard(|| {
        let data = dataset(ds)?;
        let base = match (scheme, target) {
            (KdbKernelScheme::Kdbc, KdbTarget::Ate) => BalanceScheme::kdbc(),
            (KdbKernelScheme::Kdm1, KdbTarget::Ate) => BalanceScheme::kdm1(),
            (KdbKernelScheme::Kdbc, KdbTarget::Att) => BalanceScheme::att_kdbc(),
            (KdbKernelScheme::Kdm1, KdbTarget::Att) => BalanceScheme::att_kdm1(),
        };
        let w = solve_weights(data, &base.with_lambda(lambda), bandwidth(data, sigma2)?)?;
        put_weights(out, w)
    })
}

/// Inverse-propensity weights from a logistic fit. For the ATT,
/// `normalized != 0` rescales the control odds weights to sum to one.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_ipw_weights(
    ds: *const KdbDataset,
    target: KdbTarget,
    normalized: i32,
    out: *mut *mut KdbWeights,
) -> KdbStatus {
    guard(|| {
        let data = dataset(ds)?;
        let model = fit_propensity_logistic(data)?;
        let w = match target {
            KdbTarget::Ate => ipw_ate_weights(&model, data)?,
            KdbTarget::Att if normalized != 0 => ipw_att_weights_normalized(&model, data)?,
            KdbTarget::Att => ipw_att_weights(&model, data)?,
        };
        put_weights(out, w)
    })
}

/// Uniform weights within each group.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_unadjusted_weights(ds: *const KdbDataset, out: *mut *mut KdbWeights) -> KdbStatus {
    guard(|| put_weights(out, unadjusted_weights(dataset(ds)?)))
}

/// # Safety
/// `w` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn kdb_weights_free(w: *mut KdbWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Lengths of the treated and control weight vectors.
///
/// # Safety
/// `w` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_weights_len(w: *const KdbWeights, n1: *mut usize, n0: *mut usize) -> KdbStatus {
    guard(|| {
        let w = weights(w)?;
        write(n1, w.p.len(), "n1")?;
        write(n0, w.q.len(), "n0")
    })
}

/// Copy the treated weights into `p` and control weights into `q`, in the
/// dataset's row order within each group. Capacities must match exactly.
///
/// # Safety
/// `p` must hold `p_len` doubles and `q` must hold `q_len`.
#[no_mangle]
pub unsafe extern "C" fn kdb_weights_copy(
    w: *const KdbWeights,
    p: *mut f64,
    p_len: usize,
    q: *mut f64,
    q_len: usize,
) -> KdbStatus {
    guard(|| {
        let w = weights(w)?;
        if p_len != w.p.len() || q_len != w.q.len() {
            return Err(Fail(
                KdbStatus::DimensionMismatch,
                format!("buffers hold {p_len} and {q_len}, weights have {} and {}", w.p.len(), w.q.len()),
            ));
        }
        for (src, dst, len, what) in [(&w.p, p, p_len, "p"), (&w.q, q, q_len, "q")] {
            if len > 0 {
                if dst.is_null() {
                    return Err(null(what));
                }
                std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// Weighted effect estimate; the weights decide between ATE and ATT.
///
/// # Safety
/// Handles must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_estimate(ds: *const KdbDataset, w: *const KdbWeights, value: *mut f64) -> KdbStatus {
    guard(|| {
        let v = estimate(dataset(ds)?, weights(w)?)?;
        write(value, v, "value")
    })
}

/// Weighted squared kernel distance. A `sigma2 <= 0` selects the median
/// heuristic.
///
/// # Safety
/// Handles must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn kdb_rw_stat(
    ds: *const KdbDataset,
    w: *const KdbWeights,
    sigma2: f64,
    value: *mut f64,
) -> KdbStatus {
    guard(|| {
        let data = dataset(ds)?;
        let v = rw_stat(data, weights(w)?, bandwidth(data, sigma2)?)?;
        write(value, v, "value")
    })
}

/// Summary balance diagnostics. Per-covariate ASMDs are written to `asmd`
/// when it is non-null; it must then hold `d` doubles.
///
/// # Safety
/// Handles must be live, `report` writable, and `asmd` null or `asmd_len`
/// long.
#[no_mangle]
pub unsafe extern "C" fn kdb_balance_report(
    ds: *const KdbDataset,
    w: *const KdbWeights,
    sigma2: f64,
    report: *mut KdbBalanceReport,
    asmd: *mut f64,
    asmd_len: usize,
) -> KdbStatus {
    guard(|| {
        let data = dataset(ds)?;
        let b = balance_report(data, weights(w)?, bandwidth(data, sigma2)?)?;
        if !asmd.is_null() {
            if asmd_len != b.per_covariate_asmd.len() {
                return Err(Fail(
                    KdbStatus::DimensionMismatch,
                    format!("asmd buffer holds {asmd_len}, dataset has {} covariates", b.per_covariate_asmd.len()),
                ));
            }
            std::ptr::copy_nonoverlapping(b.per_covariate_asmd.as_ptr(), asmd, asmd_len);
        }
        let r = KdbBalanceReport {
            rw: b.rw,
            kd: b.kd,
            max_asmd: b.max_asmd,
            mean_asmd: b.mean_asmd,
            med_asmd: b.med_asmd,
            mean_ks: b.mean_ks,
            mean_t: b.mean_t,
        };
        write(report, r, "report")
    })
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn kdb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kdb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
