//! Dense Cholesky helpers.
//!
//! nalgebra's `Cholesky` reports failure as `None`; on failure the
//! factorization is replayed here to recover the offending pivot.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of the first diagonal jitter, times mean(diag).
pub const JITTER_BASE: f64 = 1e-10;
/// Number of ×10 escalations after the first jitter attempt.
pub const JITTER_ESCALATIONS: u32 = 3;

/// Lower Cholesky factor `L` with `A = L Lᵀ`, or the first non-positive
/// pivot encountered.
pub fn cholesky_lower(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    if let Some(c) = a.clone().cholesky() {
        let l = c.unpack();
        if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Ok(l);
        }
    }
    failing_pivot(a)
}

fn failing_pivot(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(pivot);
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Factorizes `A + jitter·I`, starting with no jitter and then escalating
/// from `JITTER_BASE · mean(diag A)` by factors of ten.
///
/// Returns the factor and the jitter that was applied.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut pivot = match cholesky_lower(a) {
        Ok(l) => return Ok((l, 0.0)),
        Err(p) => p,
    };
    let n = a.nrows();
    let mean_diag = a.diagonal().iter().sum::<f64>() / n as f64;
    let mut jitter = JITTER_BASE * mean_diag.abs().max(f64::MIN_POSITIVE);
    for attempt in 0..=JITTER_ESCALATIONS {
        if attempt > 0 {
            jitter *= 10.0;
        }
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        match cholesky_lower(&shifted) {
            Ok(l) => {
                log::debug!("cholesky succeeded with jitter {jitter:e}");
                return Ok((l, jitter));
            }
            Err(p) => pivot = p,
        }
    }
    Err(Error::NotPositiveDefinite { pivot, jitter })
}

/// Inverse of a lower-triangular matrix with positive diagonal.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("cholesky factor has a positive diagonal")
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal");
    l.tr_solve_lower_triangular(&z)
        .expect("cholesky factor has a positive diagonal")
}
