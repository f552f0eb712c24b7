//! Exact error metrics for a selection and the SVD reference.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linop::{DenseMatrix, MaterializedOperator};
use crate::nystrom::nystrom_reconstruct;
use crate::scalar::Real;

/// Reference errors at or below this are treated as exact.
pub const EXACT_REFERENCE: f64 = 1e-14;

/// `||X - P_s X||_F^2`, projecting with a column-pivoted QR of `X_[s]`.
/// Numerically dependent selected columns are dropped at the QR rank
/// cutoff. An empty selection gives `||X||_F^2`.
pub fn cssp_error<T: Real>(x: &DenseMatrix<T>, mask: &[bool]) -> Result<T> {
    check_len(x.cols(), mask.len())?;
    let xd = x.to_dmatrix();
    let xs = x.select_columns(mask);
    if xs.ncols() == 0 {
        return Ok(x.frobenius_sq());
    }
    let (m, k) = xs.shape();
    let qr = xs.col_piv_qr();
    let r = qr.r();
    let q = qr.q();
    let lead = r[(0, 0)].abs();
    let tol = T::lit(m.max(k) as f64) * T::eps() * lead;
    let rank = (0..r.nrows().min(k))
        .take_while(|&i| r[(i, i)].abs() > tol)
        .count();
    let qr_cols = q.columns(0, rank);
    let resid = &xd - qr_cols * (qr_cols.transpose() * &xd);
    Ok(resid.norm_squared())
}

/// `(||K - K_hat_s||_F^2, tr(K - K_hat_s))` for the Nyström approximation
/// `K_hat_s = K_[s] K_[s,s]^+ K_[s]^T`.
pub fn nystrom_errors<T: Real>(k: &DMatrix<T>, mask: &[bool]) -> Result<(T, T)> {
    let op = MaterializedOperator::new(k)?;
    check_len(k.nrows(), mask.len())?;
    let resid = k - nystrom_reconstruct(&op, mask)?.to_dense();
    Ok((resid.norm_squared(), resid.trace()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorNorm {
    /// `sum_{i > k} sigma_i^2`.
    FrobeniusSq,
    /// `sum_{i > k} sigma_i`; the trace norm for PSD input.
    Trace,
}

/// Error of the best rank-`k` approximation from the singular spectrum.
pub fn best_rank_k_error<T: Real>(a: &DMatrix<T>, k: usize, norm: ErrorNorm) -> Result<T> {
    let (m, n) = a.shape();
    if k > m.min(n) {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds min(m, n) = {}",
            m.min(n)
        )));
    }
    let mut sv: Vec<T> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sv
        .iter()
        .skip(k)
        .map(|&s| match norm {
            ErrorNorm::FrobeniusSq => s * s,
            ErrorNorm::Trace => s,
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Factor<T> {
    Ratio {
        value: T,
    },
    /// The reference error vanished; the raw error is reported instead.
    ExactReference {
        error: T,
    },
}

impl<T: Real> Factor<T> {
    pub fn ratio(&self) -> Option<T> {
        match *self {
            Factor::Ratio { value } => Some(value),
            Factor::ExactReference { .. } => None,
        }
    }
}

/// `error / reference`, or the exact-reference sentinel when
/// `reference <= 1e-14`.
pub fn approximation_factor<T: Real>(error: T, reference: T) -> Factor<T> {
    if reference <= T::lit(EXACT_REFERENCE) {
        Factor::ExactReference { error }
    } else {
        Factor::Ratio {
            value: error / reference,
        }
    }
}

/// One evaluated selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub frobenius_sq_error: f64,
    /// Nyström runs only.
    pub trace_error: Option<f64>,
    pub best_rank_k_error: f64,
    /// `None` when the reference error is zero.
    pub approximation_factor: Option<f64>,
    pub wall_time_s: Option<f64>,
    /// Number of columns actually selected.
    pub selected: usize,
}
