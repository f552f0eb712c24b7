//! Conjugate gradients for the shifted system `L_t x = r` with
//! `L_t = T (K - delta I) T + delta I`, applied matrix-free.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{check_delta, check_unit_box, guard, spd_solve};
use crate::error::{check_len, Error, Result};
use crate::linop::SymmetricOperator;
use crate::scalar::{all_finite, dot, Real};

/// Weights are clamped to `1 - T_CLAMP` before `L_t` is built.
pub const T_CLAMP: f64 = 1e-9;

/// Largest dimension accepted by [`dense_solve_oracle`].
pub const DENSE_SOLVE_GUARD: usize = 2048;

/// A symmetric positive definite map that CG can iterate with.
pub trait LinearMap<T: Real> {
    fn dim(&self) -> usize;
    fn apply_into(&self, v: &[T], out: &mut [T]);
}

/// `L_t` restricted to a support set `S` (all of `0..n` when not reduced):
///
/// `(L_t)_S v = t_S ⊙ K[S,S](t_S ⊙ v) - delta t_S ⊙ t_S ⊙ v + delta v`.
///
/// Each application costs exactly one product with `K` (or its principal
/// block on `S`).
pub struct LtOperator<'a, T: Real> {
    base: &'a dyn SymmetricOperator<T>,
    support: Vec<usize>,
    full: bool,
    t: Vec<T>,
    delta: T,
}

fn clamp_weight<T: Real>(x: T) -> T {
    let gap = T::lit(T_CLAMP).max(T::eps() * T::lit(4.0));
    x.min(T::one() - gap)
}

impl<'a, T: Real> LtOperator<'a, T> {
    /// Full-dimension operator. Zero weights are kept as rows `delta e_j`.
    pub fn new(base: &'a dyn SymmetricOperator<T>, t: &[T], delta: T) -> Result<Self> {
        check_len(base.dim(), t.len())?;
        check_unit_box(t)?;
        check_delta(delta)?;
        Ok(Self {
            base,
            support: (0..t.len()).collect(),
            full: true,
            t: t.iter().map(|&x| clamp_weight(x)).collect(),
            delta,
        })
    }

    /// Operator on the support `{j : t_j > 0}` only. A solve of
    /// `L_t q = t ⊙ r` vanishes off the support, so solving here and
    /// re-embedding is exact.
    pub fn reduced(base: &'a dyn SymmetricOperator<T>, t: &[T], delta: T) -> Result<Self> {
        check_len(base.dim(), t.len())?;
        check_unit_box(t)?;
        check_delta(delta)?;
        let support: Vec<usize> = (0..t.len()).filter(|&j| t[j] > T::zero()).collect();
        let full = support.len() == t.len();
        let t = support.iter().map(|&j| clamp_weight(t[j])).collect();
        Ok(Self {
            base,
            support,
            full,
            t,
            delta,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    /// Clamped weights on the support.
    pub fn weights(&self) -> &[T] {
        &self.t
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn base(&self) -> &'a dyn SymmetricOperator<T> {
        self.base
    }

    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    /// Restricts a full-length vector to the support.
    pub fn gather(&self, full: &[T]) -> Vec<T> {
        self.support.iter().map(|&j| full[j]).collect()
    }

    /// Re-embeds a support vector into length `n`, zero elsewhere.
    pub fn embed(&self, sub: &[T]) -> Vec<T> {
        let mut full = vec![T::zero(); self.base.dim()];
        for (&j, &x) in self.support.iter().zip(sub) {
            full[j] = x;
        }
        full
    }

    /// `K[S,S] v` (the full product when not reduced).
    pub fn apply_k_into(&self, v: &[T], out: &mut [T]) {
        if self.full {
            self.base.apply_into(v, out)
        } else {
            self.base.apply_principal_into(&self.support, v, out)
        }
    }

    /// `Z v = K v - delta v` on the support.
    pub fn apply_z(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        self.apply_k_into(v, &mut out);
        for (o, &x) in out.iter_mut().zip(v) {
            *o -= self.delta * x;
        }
        out
    }

    /// Checked application.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        check_len(self.support.len(), v.len())?;
        let mut out = vec![T::zero(); v.len()];
        LinearMap::apply_into(self, v, &mut out);
        Ok(out)
    }

    /// Dense `L_t` on the support, assembled from columns of `K`.
    pub fn to_dense(&self) -> Result<DMatrix<T>> {
        let s = self.support.len();
        guard("dense L_t assembly", s, DENSE_SOLVE_GUARD)?;
        let mut l = DMatrix::zeros(s, s);
        for (b, &j) in self.support.iter().enumerate() {
            let col = self.base.column(j);
            for (a, &i) in self.support.iter().enumerate() {
                l[(a, b)] = self.t[a] * col[i] * self.t[b];
            }
            l[(b, b)] += self.delta * (T::one() - self.t[b] * self.t[b]);
        }
        Ok(l)
    }
}

impl<T: Real> LinearMap<T> for LtOperator<'_, T> {
    fn dim(&self) -> usize {
        self.support.len()
    }

    fn apply_into(&self, v: &[T], out: &mut [T]) {
        let u: Vec<T> = v.iter().zip(&self.t).map(|(&x, &t)| t * x).collect();
        self.apply_k_into(&u, out);
        for i in 0..v.len() {
            let t = self.t[i];
            out[i] = t * out[i] - self.delta * t * u[i] + self.delta * v[i];
        }
    }
}

/// `lt_apply(op, v)`: one product with `K` plus element-wise work.
pub fn lt_apply<T: Real>(op: &LtOperator<'_, T>, v: &[T]) -> Result<Vec<T>> {
    op.apply(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgConfig<T> {
    /// Stop when `|r| <= rel_tolerance * max(|rhs|, abs_floor)`.
    pub rel_tolerance: T,
    /// `None` means `min(10 n, 1000)`.
    pub max_iters: Option<usize>,
    pub abs_floor: T,
    /// Systems of at most this size are solved by a dense Cholesky
    /// factorization of the assembled `L_t` instead of CG; 0 disables.
    /// Only the gradient estimators consult it.
    pub direct_max: usize,
}

impl<T: Real> Default for CgConfig<T> {
    fn default() -> Self {
        Self {
            rel_tolerance: T::lit(1e-8),
            max_iters: None,
            abs_floor: T::lit(1e-14),
            direct_max: 512,
        }
    }
}

impl<T: Real> CgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > T::zero() && self.rel_tolerance < T::one()) {
            return Err(Error::InvalidInput(format!(
                "CG rel_tolerance must lie in (0, 1), got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::InvalidInput("CG max_iters must be >= 1".into()));
        }
        if !(self.abs_floor > T::zero()) {
            return Err(Error::InvalidInput("CG abs_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn max_iters_for(&self, n: usize) -> usize {
        self.max_iters.unwrap_or_else(|| (10 * n).min(1000)).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T> {
    pub iterations: usize,
    pub final_relative_residual: T,
    pub converged: bool,
}

pub fn cg_solve<T: Real, A: LinearMap<T> + ?Sized>(
    op: &A,
    rhs: &[T],
    cfg: &CgConfig<T>,
) -> Result<(Vec<T>, SolveReport<T>)> {
    cg_solve_monitored(op, rhs, None, cfg, &mut |_| {})
}

/// CG started from `x0` instead of zero.
pub fn cg_solve_from<T: Real, A: LinearMap<T> + ?Sized>(
    op: &A,
    rhs: &[T],
    x0: &[T],
    cfg: &CgConfig<T>,
) -> Result<(Vec<T>, SolveReport<T>)> {
    cg_solve_monitored(op, rhs, Some(x0), cfg, &mut |_| {})
}

/// CG with a callback receiving each iterate. Non-convergence is reported,
/// not raised.
pub fn cg_solve_monitored<T: Real, A: LinearMap<T> + ?Sized>(
    op: &A,
    rhs: &[T],
    x0: Option<&[T]>,
    cfg: &CgConfig<T>,
    monitor: &mut dyn FnMut(&[T]),
) -> Result<(Vec<T>, SolveReport<T>)> {
    let n = op.dim();
    check_len(n, rhs.len())?;
    if !all_finite(rhs) {
        return Err(Error::NonFinite("CG right-hand side".into()));
    }
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == T::zero() {
        return Ok((
            vec![T::zero(); n],
            SolveReport {
                iterations: 0,
                final_relative_residual: T::zero(),
                converged: true,
            },
        ));
    }
    let denom = bnorm.max(cfg.abs_floor);
    let target = cfg.rel_tolerance * denom;
    let max_iters = cfg.max_iters_for(n);

    let mut ap = vec![T::zero(); n];
    let (mut x, mut r) = match x0 {
        Some(x0) if all_finite(x0) && x0.len() == n && x0.iter().any(|v| *v != T::zero()) => {
            op.apply_into(x0, &mut ap);
            let r: Vec<T> = rhs.iter().zip(&ap).map(|(&b, &a)| b - a).collect();
            (x0.to_vec(), r)
        }
        _ => (vec![T::zero(); n], rhs.to_vec()),
    };
    let mut rs = dot(&r, &r);
    let mut p = r.clone();
    let mut iterations = 0;

    while rs.sqrt() > target && iterations < max_iters {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) || !pap.finite() {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        monitor(&x);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if !all_finite(&x) {
        return Err(Error::NonFinite("CG iterate".into()));
    }
    let rel = rs.sqrt() / denom;
    Ok((
        x,
        SolveReport {
            iterations,
            final_relative_residual: rel,
            converged: rel <= cfg.rel_tolerance,
        },
    ))
}

/// Direct dense solve of `L_t x = rhs` (Cholesky, LU fallback). Test oracle.
pub fn dense_solve_oracle<T: Real>(op: &LtOperator<'_, T>, rhs: &[T]) -> Result<Vec<T>> {
    check_len(op.support().len(), rhs.len())?;
    let l = op.to_dense()?;
    let x = spd_solve(&l, &DVector::from_column_slice(rhs), "L_t")?;
    Ok(x.as_slice().to_vec())
}
