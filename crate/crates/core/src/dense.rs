//! Small dense linear-algebra helpers for the desk-scale reference paths
//! (exact losses and gradients, evaluation metrics, oracles).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest dimension accepted by the O(n^3) exact objective routines.
pub const DENSE_OBJECTIVE_GUARD: usize = 256;

pub(crate) fn guard(op: &'static str, n: usize, max: usize) -> Result<()> {
    if n > max {
        Err(Error::SizeGuard { op, n, max })
    } else {
        Ok(())
    }
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `rel_cutoff * sigma_max` are treated as zero.
pub(crate) fn pinv<T: Real>(a: &DMatrix<T>, rel_cutoff: T) -> DMatrix<T> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.iter().fold(T::zero(), |m, s| m.max(*s));
    let cut = rel_cutoff * smax;
    let mut out = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > T::zero() {
            let inv = T::one() / s;
            // out += v_i * inv * u_i^T
            for p in 0..c {
                let vp = vt[(i, p)] * inv;
                for q in 0..r {
                    out[(p, q)] += vp * u[(q, i)];
                }
            }
        }
    }
    out
}

/// Inverse of a symmetric positive definite matrix; falls back to LU.
pub(crate) fn spd_inverse<T: Real>(a: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.inverse());
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

pub(crate) fn spd_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>, what: &str) -> Result<DVector<T>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if x.iter().all(|v| v.finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

pub(crate) fn diag<T: Real>(t: &[T]) -> DMatrix<T> {
    DMatrix::from_diagonal(&DVector::from_column_slice(t))
}

/// `T K T + delta (I - T^2)`.
pub(crate) fn inner_matrix<T: Real>(k: &DMatrix<T>, t: &[T], delta: T) -> DMatrix<T> {
    let n = t.len();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = t[i] * k[(i, j)] * t[j];
        if i == j {
            v += delta * (T::one() - t[i] * t[i]);
        }
        v
    })
}

/// `[T K T + delta (I - T^2)]^+`, using the ordinary inverse on the open
/// cube and a cutoff pseudo-inverse when some weights equal one.
pub(crate) fn inner_inverse<T: Real>(k: &DMatrix<T>, t: &[T], delta: T) -> DMatrix<T> {
    let inner = inner_matrix(k, t, delta);
    let on_corner = t.iter().any(|&x| x >= T::one());
    if !on_corner {
        if let Ok(inv) = spd_inverse(&inner, "inner matrix") {
            if inv.iter().all(|v| v.finite()) {
                return inv;
            }
        }
    }
    pinv(&inner, T::lit(PINV_CUTOFF))
}

/// Relative singular-value cutoff for corner-point pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-10;

pub(crate) fn check_unit_box<T: Real>(t: &[T]) -> Result<()> {
    for (j, &x) in t.iter().enumerate() {
        if !x.finite() || x < T::zero() || x > T::one() {
            return Err(Error::InvalidInput(format!(
                "t[{j}] = {x} lies outside [0, 1]"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_interior<T: Real>(t: &[T]) -> Result<()> {
    for (j, &x) in t.iter().enumerate() {
        if !(x > T::zero() && x < T::one()) {
            return Err(Error::NotInterior {
                index: j,
                value: x.as_f64(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_delta<T: Real>(delta: T) -> Result<()> {
    if delta > T::zero() && delta.finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "delta must be positive, got {delta}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&a, 1e-10);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_rejects_large() {
        assert!(guard("x", 10, 5).is_err());
        assert!(guard("x", 5, 5).is_ok());
    }
}
