//! Monte Carlo driver shared by the CSSP and Nyström stochastic gradients.
//!
//! Probes are keyed by `(seed, iteration, probe index)`, evaluated in
//! parallel, and reduced in index order, so the estimate is bit-identical
//! regardless of thread scheduling.

use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::check_delta;
use crate::error::{Error, Result};
use crate::linop::{draw_keyed_probe, ProbeKey, SymmetricOperator};
use crate::scalar::{all_finite, dot, Real};
use crate::solver::{cg_solve_monitored, CgConfig, LinearMap, LtOperator, SolveReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    /// Shift `delta > 0` in `L_t`.
    pub delta: T,
    /// Penalty weight on `sum t_j`.
    pub lambda: T,
    /// Monte Carlo size `M`.
    pub mc_size: usize,
}

impl<T: Real> Default for HyperParams<T> {
    fn default() -> Self {
        Self {
            delta: T::one(),
            lambda: T::zero(),
            mc_size: 10,
        }
    }
}

impl<T: Real> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if !(self.lambda >= T::zero()) || !self.lambda.finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.mc_size == 0 {
            return Err(Error::InvalidInput("Monte Carlo size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate<T> {
    /// Estimated gradient in `t`. Coordinates with `t_j = 0` are frozen and
    /// carry zero.
    pub grad: Vec<T>,
    pub probes_used: usize,
    /// Per-probe diagonal samples (`phi` or `psi`), full length, when
    /// requested.
    pub per_probe: Option<Vec<Vec<T>>>,
    /// Unbiased estimate of the penalized loss at `t`.
    pub loss_estimate: T,
    pub cg_iterations: usize,
    pub cg_unconverged: usize,
}

/// Previous CG solutions per probe slot, stored at full length.
#[derive(Clone, Debug, Default)]
pub struct WarmStarts<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> WarmStarts<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new() }
    }

    fn ensure(&mut self, len: usize) {
        if self.slots.len() < len {
            self.slots.resize(len, None);
        }
    }
}

/// Where the probes of one gradient evaluation come from.
pub struct ProbeOptions<'w, T> {
    pub seed: u64,
    pub iteration: u64,
    pub keep_per_probe: bool,
    pub warm: Option<&'w mut WarmStarts<T>>,
}

impl<T> ProbeOptions<'_, T> {
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self {
            seed,
            iteration,
            keep_per_probe: false,
            warm: None,
        }
    }

    pub fn keep_per_probe(mut self) -> Self {
        self.keep_per_probe = true;
        self
    }
}

pub(crate) struct ProbeOutput<T> {
    /// Diagonal sample on the support.
    pub sample: Vec<T>,
    /// Unpenalized loss sample.
    pub loss: T,
    pub cg_iterations: usize,
    pub cg_unconverged: usize,
}

/// Per-probe solver context: the reduced operator, CG settings and the
/// probe's warm-start slots.
pub(crate) struct ProbeCtx<'a, 'o, T: Real> {
    pub lt: &'a LtOperator<'o, T>,
    pub cg: &'a CgConfig<T>,
    pub warm: &'a mut [Option<Vec<T>>],
    pub use_warm: bool,
    pub direct: Option<&'a Cholesky<T, Dyn>>,
    pub iterations: usize,
    pub unconverged: usize,
}

impl<T: Real> ProbeCtx<'_, '_, T> {
    /// Solves `(L_t)_S x = rhs` using warm-start slot `slot`.
    pub fn solve(&mut self, slot: usize, rhs: &[T]) -> Result<Vec<T>> {
        if let Some(ch) = self.direct {
            return Ok(ch
                .solve(&DVector::from_column_slice(rhs))
                .as_slice()
                .to_vec());
        }
        let x0 = if self.use_warm {
            self.warm[slot]
                .as_ref()
                .map(|full| self.scaled_guess(&self.lt.gather(full), rhs))
        } else {
            None
        };
        let (x, rep): (Vec<T>, SolveReport<T>) =
            cg_solve_monitored(self.lt, rhs, x0.as_deref(), self.cg, &mut |_| {})?;
        self.iterations += rep.iterations;
        if !rep.converged {
            self.unconverged += 1;
        }
        if self.use_warm {
            self.warm[slot] = Some(self.lt.embed(&x));
        }
        Ok(x)
    }

    /// Energy-optimal multiple of a previous solution; never a worse start
    /// than zero in the `L_t` norm.
    fn scaled_guess(&self, prev: &[T], rhs: &[T]) -> Vec<T> {
        let mut lp = vec![T::zero(); prev.len()];
        self.lt.apply_into(prev, &mut lp);
        let den = dot(prev, &lp);
        if !(den > T::zero()) {
            return vec![T::zero(); prev.len()];
        }
        let alpha = dot(prev, rhs) / den;
        prev.iter().map(|&p| alpha * p).collect()
    }
}

/// Runs `hp.mc_size` probes of `probe` and assembles
/// `2 * mean(sample) + lambda` on the support of `t`.
pub(crate) fn estimate<T, F>(
    op: &dyn SymmetricOperator<T>,
    t: &[T],
    hp: &HyperParams<T>,
    cg: &CgConfig<T>,
    opts: ProbeOptions<'_, T>,
    solves_per_probe: usize,
    probe: F,
) -> Result<GradientEstimate<T>>
where
    T: Real,
    F: Fn(&mut ProbeCtx<'_, '_, T>, &[T]) -> Result<ProbeOutput<T>> + Sync,
{
    hp.validate()?;
    cg.validate()?;
    let lt = LtOperator::reduced(op, t, hp.delta)?;
    let n = op.dim();
    let m = hp.mc_size;
    let s = lt.support().len();
    let direct = if s > 0 && s <= cg.direct_max {
        lt.to_dense().ok().and_then(|l| l.cholesky())
    } else {
        None
    };

    let mut scratch = WarmStarts::new();
    let use_warm = opts.warm.is_some();
    let warm = opts.warm.unwrap_or(&mut scratch);
    warm.ensure(m * solves_per_probe);

    let outputs: Vec<Result<ProbeOutput<T>>> = warm.slots[..m * solves_per_probe]
        .par_chunks_mut(solves_per_probe)
        .enumerate()
        .map(|(i, slots)| {
            let key = ProbeKey {
                seed: opts.seed,
                iteration: opts.iteration,
                index: i as u64,
            };
            let z = draw_keyed_probe::<T>(n, key).z;
            let mut ctx = ProbeCtx {
                lt: &lt,
                cg,
                warm: slots,
                use_warm,
                direct: direct.as_ref(),
                iterations: 0,
                unconverged: 0,
            };
            let mut out = probe(&mut ctx, &z)?;
            out.cg_iterations = ctx.iterations;
            out.cg_unconverged = ctx.unconverged;
            if !all_finite(&out.sample) || !out.loss.finite() {
                return Err(Error::NonFinite(format!(
                    "gradient sample for probe {i} at iteration {}",
                    opts.iteration
                )));
            }
            Ok(out)
        })
        .collect();

    let mut sum = vec![T::zero(); s];
    let mut loss = T::zero();
    let mut cg_iterations = 0;
    let mut cg_unconverged = 0;
    let mut per_probe = opts.keep_per_probe.then(|| Vec::with_capacity(m));
    for out in outputs {
        let out = out?;
        for (a, b) in sum.iter_mut().zip(&out.sample) {
            *a += *b;
        }
        loss += out.loss;
        cg_iterations += out.cg_iterations;
        cg_unconverged += out.cg_unconverged;
        if let Some(pp) = per_probe.as_mut() {
            pp.push(lt.embed(&out.sample));
        }
    }
    if cg_unconverged > 0 {
        log::warn!(
            "{cg_unconverged} CG solve(s) did not reach tolerance at iteration {}",
            opts.iteration
        );
    }
    let mf = T::from_usize(m).expect("probe count fits the scalar type");
    let two = T::lit(2.0);
    let grad_sub: Vec<T> = sum.iter().map(|&v| two * v / mf + hp.lambda).collect();
    let penalty = hp.lambda * t.iter().copied().sum::<T>();
    Ok(GradientEstimate {
        grad: lt.embed(&grad_sub),
        probes_used: m,
        per_probe,
        loss_estimate: loss / mf + penalty,
        cg_iterations,
        cg_unconverged,
    })
}

/// `t_S ⊙ v`.
pub(crate) fn weight<T: Real>(lt: &LtOperator<'_, T>, v: &[T]) -> Vec<T> {
    lt.weights().iter().zip(v).map(|(&t, &x)| t * x).collect()
}
