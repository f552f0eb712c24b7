//! Continuous CSSP objective
//! `f(t) = -tr[X^T P(t) X] + lambda * sum(t)` with
//! `P(t) = X T [T X^T X T + delta (I - T^2)]^+ T X^T`.
//!
//! The dense routines here are exact reference implementations guarded to
//! small `n`. [`grad_f_stochastic`] is the matrix-free path used by the
//! optimizer; it only needs products with `K = X^T X` (or with a kernel
//! matrix, for trace-norm Nyström selection).

use nalgebra::DMatrix;

use crate::dense::{
    check_delta, check_interior, check_unit_box, diag, guard, inner_inverse, inner_matrix,
    spd_inverse, DENSE_OBJECTIVE_GUARD,
};
use crate::error::{check_len, Result};
use crate::estimator::{estimate, weight, ProbeOptions, ProbeOutput};
use crate::linop::{DenseMatrix, SymmetricOperator};
use crate::scalar::{dot, Real};
use crate::solver::CgConfig;

pub use crate::estimator::{GradientEstimate, HyperParams};

/// `P(t)` as an `m x m` matrix.
pub fn projection_tilde_dense<T: Real>(
    x: &DenseMatrix<T>,
    t: &[T],
    delta: T,
) -> Result<DMatrix<T>> {
    check_len(x.cols(), t.len())?;
    guard("projection_tilde_dense", t.len(), DENSE_OBJECTIVE_GUARD)?;
    check_unit_box(t)?;
    check_delta(delta)?;
    let xd = x.to_dmatrix();
    let k = xd.transpose() * &xd;
    let xt = &xd * diag(t);
    Ok(&xt * inner_inverse(&k, t, delta) * xt.transpose())
}

pub fn f_lambda_dense<T: Real>(x: &DenseMatrix<T>, t: &[T], delta: T, lambda: T) -> Result<T> {
    let p = projection_tilde_dense(x, t, delta)?;
    let xd = x.to_dmatrix();
    let fit = (xd.transpose() * p * &xd).trace();
    Ok(-fit + lambda * t.iter().copied().sum::<T>())
}

/// Exact gradient `2 Diag[L^-1 T K^2 (T L^-1 T Z - I)] + lambda 1` on the
/// open cube.
pub fn grad_f_exact<T: Real>(k: &DMatrix<T>, t: &[T], delta: T, lambda: T) -> Result<Vec<T>> {
    check_interior(t)?;
    grad_f_dense(k, t, delta, lambda)
}

/// Same formula, accepting `t` in `[0, 1)^n`. Zero weights are legal for the
/// formula itself; the optimizer freezes them.
pub(crate) fn grad_f_dense<T: Real>(
    k: &DMatrix<T>,
    t: &[T],
    delta: T,
    lambda: T,
) -> Result<Vec<T>> {
    let n = t.len();
    check_len(k.nrows(), n)?;
    guard("grad_f_exact", n, DENSE_OBJECTIVE_GUARD)?;
    check_delta(delta)?;
    let tm = diag(t);
    let eye = DMatrix::identity(n, n);
    let z = k - &eye * delta;
    let linv = spd_inverse(&inner_matrix(k, t, delta), "L_t")?;
    let left = &linv * &tm * (k * k);
    let right = &tm * &linv * &tm * &z - &eye;
    Ok((0..n)
        .map(|j| T::lit(2.0) * left.row(j).dot(&right.column(j).transpose()) + lambda)
        .collect())
}

/// Unbiased gradient estimate from `hp.mc_size` Rademacher probes:
/// `a = K z`, `b = L^-1 (t ⊙ a)`, `phi = b ⊙ Z(t ⊙ b) - a ⊙ b`, and the
/// estimate is `2 mean(phi) + lambda`.
///
/// Coordinates with `t_j = 0` are frozen: solves run on the support only and
/// the frozen gradient entries are zero.
pub fn grad_f_stochastic<T: Real>(
    k: &dyn SymmetricOperator<T>,
    t: &[T],
    hp: &HyperParams<T>,
    cg: &CgConfig<T>,
    opts: ProbeOptions<'_, T>,
) -> Result<GradientEstimate<T>> {
    estimate(k, t, hp, cg, opts, 1, |ctx, z| {
        let lt = ctx.lt;
        let s = lt.support().len();
        let mut a = vec![T::zero(); s];
        lt.base().apply_rows_into(lt.support(), z, &mut a);
        let rhs = weight(lt, &a);
        let b = ctx.solve(0, &rhs)?;
        let zu = lt.apply_z(&weight(lt, &b));
        let sample = (0..s).map(|i| b[i] * zu[i] - a[i] * b[i]).collect();
        Ok(ProbeOutput {
            sample,
            // z^T K T L^-1 T K z
            loss: -dot(&rhs, &b),
            cg_iterations: 0,
            cg_unconverged: 0,
        })
    })
}
