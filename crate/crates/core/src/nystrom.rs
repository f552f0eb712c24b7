//! Continuous Nyström objective in Frobenius norm,
//! `g(t) = |K - K(t)|_F^2 + lambda * sum(t)` with
//! `K(t) = K T [T K T + delta (I - T^2)]^+ T K`, plus the factored
//! Nyström approximation `K_[s] K_[s,s]^+ K_[s]^T`.
//!
//! Trace-norm Nyström selection needs no code of its own: it is CSSP on
//! `K` (see [`crate::cssp::grad_f_stochastic`]).

use nalgebra::{DMatrix, DVector};

use crate::dense::{
    check_delta, check_interior, check_unit_box, diag, guard, inner_inverse, inner_matrix,
    spd_inverse, DENSE_OBJECTIVE_GUARD,
};
use crate::error::{check_len, Error, Result};
use crate::estimator::{
    estimate, weight, GradientEstimate, HyperParams, ProbeOptions, ProbeOutput,
};
use crate::linop::{mask_indices, SymmetricOperator};
use crate::scalar::{dot, Real};
use crate::solver::CgConfig;

/// Relative eigenvalue cutoff for the `k x k` core pseudo-inverse.
pub const CORE_CUTOFF: f64 = 1e-10;

pub fn k_tilde_dense<T: Real>(k: &DMatrix<T>, t: &[T], delta: T) -> Result<DMatrix<T>> {
    check_len(k.nrows(), t.len())?;
    guard("k_tilde_dense", t.len(), DENSE_OBJECTIVE_GUARD)?;
    check_unit_box(t)?;
    check_delta(delta)?;
    let kt = k * diag(t);
    Ok(&kt * inner_inverse(k, t, delta) * kt.transpose())
}

pub fn g_lambda_dense<T: Real>(k: &DMatrix<T>, t: &[T], delta: T, lambda: T) -> Result<T> {
    let kt = k_tilde_dense(k, t, delta)?;
    Ok((k - kt).norm_squared() + lambda * t.iter().copied().sum::<T>())
}

/// Exact gradient `4 Diag[L^-1 T K D K (I - T L^-1 T Z)] + lambda 1` with
/// `D = K(t) - K`, on the open cube.
pub fn grad_g_exact<T: Real>(k: &DMatrix<T>, t: &[T], delta: T, lambda: T) -> Result<Vec<T>> {
    check_interior(t)?;
    grad_g_dense(k, t, delta, lambda)
}

pub(crate) fn grad_g_dense<T: Real>(
    k: &DMatrix<T>,
    t: &[T],
    delta: T,
    lambda: T,
) -> Result<Vec<T>> {
    let n = t.len();
    check_len(k.nrows(), n)?;
    guard("grad_g_exact", n, DENSE_OBJECTIVE_GUARD)?;
    check_delta(delta)?;
    let tm = diag(t);
    let eye = DMatrix::identity(n, n);
    let z = k - &eye * delta;
    let linv = spd_inverse(&inner_matrix(k, t, delta), "L_t")?;
    let d = k * &tm * &linv * &tm * k - k;
    let left = &linv * &tm * k * d * k;
    let right = &eye - &tm * &linv * &tm * &z;
    Ok((0..n)
        .map(|j| T::lit(4.0) * left.row(j).dot(&right.column(j).transpose()) + lambda)
        .collect())
}

/// Unbiased gradient estimate. Per probe:
/// `a = K z`, `b = L^-1 (t ⊙ a)`, `c = K (t ⊙ b) - a`, `d = K c`,
/// `e = L^-1 (t ⊙ d)`, and
/// `psi = b ⊙ d + a ⊙ e - e ⊙ Z(t ⊙ b) - b ⊙ Z(t ⊙ e)`;
/// the estimate is `2 mean(psi) + lambda`.
///
/// `c = (K(t) - K) z`, so `|c|^2` doubles as an unbiased loss sample.
pub fn grad_g_stochastic<T: Real>(
    k: &dyn SymmetricOperator<T>,
    t: &[T],
    hp: &HyperParams<T>,
    cg: &CgConfig<T>,
    opts: ProbeOptions<'_, T>,
) -> Result<GradientEstimate<T>> {
    estimate(k, t, hp, cg, opts, 2, |ctx, z| {
        let lt = ctx.lt;
        let op = lt.base();
        let (n, s) = (op.dim(), lt.support().len());

        let mut a_full = vec![T::zero(); n];
        op.apply_into(z, &mut a_full);
        let a = lt.gather(&a_full);
        let b = ctx.solve(0, &weight(lt, &a))?;

        let tb = weight(lt, &b);
        let mut c = vec![T::zero(); n];
        op.apply_cols_into(lt.support(), &tb, &mut c);
        for (ci, ai) in c.iter_mut().zip(&a_full) {
            *ci -= *ai;
        }
        let mut d = vec![T::zero(); s];
        op.apply_rows_into(lt.support(), &c, &mut d);
        let e = ctx.solve(1, &weight(lt, &d))?;

        let z_tb = lt.apply_z(&tb);
        let z_te = lt.apply_z(&weight(lt, &e));
        let sample = (0..s)
            .map(|i| b[i] * d[i] + a[i] * e[i] - e[i] * z_tb[i] - b[i] * z_te[i])
            .collect();
        Ok(ProbeOutput {
            sample,
            loss: dot(&c, &c),
            cg_iterations: 0,
            cg_unconverged: 0,
        })
    })
}

/// Factored Nyström approximation `C W^+ C^T` with `C = K_[s]` (`n x k`) and
/// `W = K_[s,s]`.
#[derive(Clone, Debug)]
pub struct NystromApprox<T: Real> {
    pub indices: Vec<usize>,
    /// `K_[s]`, `n x k`.
    pub columns: DMatrix<T>,
    /// `K_[s,s]^+`, `k x k`.
    pub core: DMatrix<T>,
}

impl<T: Real> NystromApprox<T> {
    pub fn rank_bound(&self) -> usize {
        self.indices.len()
    }

    /// `K_hat v` in `O(nk)`.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        check_len(self.columns.nrows(), v.len())?;
        if self.indices.is_empty() {
            return Ok(vec![T::zero(); v.len()]);
        }
        let v = DVector::from_column_slice(v);
        let w = &self.columns * (&self.core * (self.columns.transpose() * v));
        Ok(w.as_slice().to_vec())
    }

    /// Dense `n x n` reconstruction. Evaluation-scale only.
    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.columns.nrows();
        if self.indices.is_empty() {
            return DMatrix::zeros(n, n);
        }
        &self.columns * &self.core * self.columns.transpose()
    }
}

/// Builds the factored approximation from the selected columns of `K`.
/// An empty mask gives the zero approximation.
pub fn nystrom_reconstruct<T: Real>(
    k: &dyn SymmetricOperator<T>,
    mask: &[bool],
) -> Result<NystromApprox<T>> {
    let n = k.dim();
    check_len(n, mask.len())?;
    let indices = mask_indices(mask);
    let r = indices.len();
    let mut columns = DMatrix::zeros(n, r);
    for (c, &j) in indices.iter().enumerate() {
        let col = k.column(j);
        if col.iter().any(|v| !v.finite()) {
            return Err(Error::NonFinite(format!("kernel column {j}")));
        }
        columns.set_column(c, &DVector::from_vec(col));
    }
    let w = DMatrix::from_fn(r, r, |a, b| {
        let half = T::lit(0.5);
        half * (columns[(indices[a], b)] + columns[(indices[b], a)])
    });
    Ok(NystromApprox {
        indices,
        columns,
        core: psd_pinv(&w, T::lit(CORE_CUTOFF)),
    })
}

/// Pseudo-inverse of a symmetric PSD matrix through its eigendecomposition,
/// dropping eigenvalues at or below `rel_cutoff * lambda_max`.
pub(crate) fn psd_pinv<T: Real>(w: &DMatrix<T>, rel_cutoff: T) -> DMatrix<T> {
    let r = w.nrows();
    if r == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = w.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |m, v| m.max(*v));
    let cut = rel_cutoff * lmax;
    let mut out = DMatrix::zeros(r, r);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > T::zero() {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() * (T::one() / lam);
        }
    }
    out
}
