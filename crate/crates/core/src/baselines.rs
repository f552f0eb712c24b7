//! Reference selectors: uniform sampling and greedy forward selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{gram_operator, DenseMatrix, MaterializedOperator, SymmetricOperator};
use crate::scalar::{dot, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Uniform,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: BaselineMethod,
    pub k: usize,
    /// Only used by uniform sampling.
    pub seed: u64,
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds n = {n}")));
    }
    Ok(())
}

/// A uniformly random `k`-subset of `0..n`, reproducible by seed.
pub fn uniform_select(n: usize, k: usize, seed: u64) -> Result<Vec<bool>> {
    check_k(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for j in rand::seq::index::sample(&mut rng, n, k) {
        mask[j] = true;
    }
    Ok(mask)
}

pub enum GreedyInput<'a, T> {
    /// Column selection on a data matrix (CSSP).
    Data(&'a DenseMatrix<T>),
    /// Landmark selection on a kernel under the trace norm.
    Kernel(&'a dyn SymmetricOperator<T>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyResult {
    pub mask: Vec<bool>,
    /// Columns in the order they were added.
    pub order: Vec<usize>,
    /// True when the residual vanished before `k` columns were chosen.
    pub exhausted: bool,
}

/// Greedy forward selection.
///
/// Each round adds the column with the largest decrease of the residual
/// `||X - P_s X||_F^2`, which in kernel form is `||G e_j||^2 / G_jj` for the
/// residual kernel `G`. `G` is never formed: it is kept as `K - W W^T` with
/// one new column of `W` per round, and the scores are updated by rank-one
/// recursions. Ties go to the lowest index.
pub fn greedy_select<T: Real>(input: GreedyInput<'_, T>, k: usize) -> Result<GreedyResult> {
    let (gram, dense);
    let op: &dyn SymmetricOperator<T> = match input {
        GreedyInput::Data(x) if x.cols() <= x.rows() => {
            dense = MaterializedOperator::from_gram(x);
            &dense
        }
        GreedyInput::Data(x) => {
            gram = gram_operator(x.clone());
            &gram
        }
        GreedyInput::Kernel(op) => op,
    };
    let n = op.dim();
    check_k(n, k)?;

    // f_j = ||G e_j||^2, g_j = G_jj.
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    for j in 0..n {
        let col = op.column(j);
        f[j] = dot(&col, &col);
        g[j] = col[j];
    }
    let scale = g.iter().fold(T::zero(), |m, v| m.max(*v));
    let tol = T::lit(1e-12) * scale;

    let mut mask = vec![false; n];
    let mut order = Vec::with_capacity(k);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(k);
    let mut exhausted = false;
    let mut kw = vec![T::zero(); n];

    while order.len() < k {
        let mut best: Option<(usize, T)> = None;
        for j in 0..n {
            if mask[j] || !(g[j] > tol) {
                continue;
            }
            let score = f[j] / g[j];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((l, _)) = best else {
            exhausted = true;
            log::info!(
                "greedy selection: residual vanished after {} of {k} columns",
                order.len()
            );
            break;
        };

        let mut delta = op.column(l);
        for w in &basis {
            let c = w[l];
            for (d, &wi) in delta.iter_mut().zip(w) {
                *d -= c * wi;
            }
        }
        if !(delta[l] > tol) {
            // Recursion drift left a stale score; drop the candidate.
            g[l] = T::zero();
            continue;
        }
        let inv = T::one() / delta[l].sqrt();
        let omega: Vec<T> = delta.iter().map(|&d| d * inv).collect();

        op.apply_into(&omega, &mut kw);
        for w in &basis {
            let c = dot(w, &omega);
            for (a, &wi) in kw.iter_mut().zip(w) {
                *a -= c * wi;
            }
        }
        let wn = dot(&omega, &omega);
        let two = T::lit(2.0);
        for j in 0..n {
            let o = omega[j];
            f[j] = (f[j] - two * o * kw[j] + o * o * wn).max(T::zero());
            g[j] = (g[j] - o * o).max(T::zero());
        }
        mask[l] = true;
        order.push(l);
        basis.push(omega);
    }
    Ok(GreedyResult {
        mask,
        order,
        exhausted,
    })
}
