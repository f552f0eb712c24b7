//! Continuous landmark selection.
//!
//! The box `[0, 1]^n` is removed by the substitution `t = 1 - exp(-w ⊙ w)`,
//! and the penalized objective is minimized over `w` by stochastic gradient
//! descent started from `t = 1/2`. Coordinates whose weight falls below
//! `epsilon` are set to zero and frozen (their `w`-gradient vanishes), after
//! which all linear solves run on the remaining support. At termination the
//! weights are thresholded at `tau` to give the selection mask.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cssp::{grad_f_dense, grad_f_stochastic};
use crate::error::{check_len, Error, Result};
use crate::estimator::{HyperParams, ProbeOptions, WarmStarts};
use crate::linop::SymmetricOperator;
use crate::nystrom::{grad_g_dense, grad_g_stochastic};
use crate::scalar::{all_finite, Real};
use crate::solver::{cg_solve, dense_solve_oracle, CgConfig, LtOperator, SolveReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Column subset selection on `X` (operator `X^T X`).
    Cssp,
    /// Nyström landmarks under the Frobenius norm.
    NystromFrobenius,
    /// Nyström landmarks under the trace norm: CSSP run directly on `K`.
    NystromTrace,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Cssp => "cssp",
            Objective::NystromFrobenius => "nystrom-frobenius",
            Objective::NystromTrace => "nystrom-trace",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule<T> {
    Constant {
        rate: T,
    },
    Adam {
        rate: T,
        beta1: T,
        beta2: T,
        stabilizer: T,
    },
}

impl<T: Real> StepSchedule<T> {
    pub fn adam(rate: T) -> Self {
        StepSchedule::Adam {
            rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            stabilizer: T::lit(1e-8),
        }
    }

    fn rate(&self) -> T {
        match *self {
            StepSchedule::Constant { rate } | StepSchedule::Adam { rate, .. } => rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig<T> {
    pub schedule: StepSchedule<T>,
    pub max_iters: usize,
    /// Stop once `max_j |t_j^(i+1) - t_j^(i)|` stays below this for
    /// `stall_window` consecutive iterations.
    pub stall_tolerance: T,
    pub stall_window: usize,
    /// Truncation level: weights below it are zeroed and frozen.
    pub epsilon: T,
    /// Selection threshold on the final weights.
    pub tau: T,
    pub hp: HyperParams<T>,
    pub seed: u64,
    pub cg: CgConfig<T>,
    pub warm_start: bool,
    /// Record `t` every `trajectory_stride` iterations; 0 disables.
    pub trajectory_stride: usize,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::adam(T::lit(0.03)),
            max_iters: 2000,
            stall_tolerance: T::lit(1e-4),
            stall_window: 20,
            epsilon: T::lit(1e-3),
            tau: T::lit(0.5),
            hp: HyperParams::default(),
            seed: 0,
            cg: CgConfig::default(),
            warm_start: false,
            trajectory_stride: 10,
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.cg.validate()?;
        let rate = self.schedule.rate();
        if !(rate > T::zero()) || !rate.finite() {
            return Err(Error::InvalidInput(format!(
                "step rate must be positive, got {rate}"
            )));
        }
        if let StepSchedule::Adam {
            beta1,
            beta2,
            stabilizer,
            ..
        } = self.schedule
        {
            let unit = |b: T| b >= T::zero() && b < T::one();
            if !unit(beta1) || !unit(beta2) || !(stabilizer > T::zero()) {
                return Err(Error::InvalidInput("invalid Adam parameters".into()));
            }
        }
        if !(self.epsilon >= T::zero() && self.epsilon < self.tau && self.tau <= T::one()) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= epsilon < tau <= 1, got epsilon = {}, tau = {}",
                self.epsilon, self.tau
            )));
        }
        if self.max_iters == 0 || self.stall_window == 0 {
            return Err(Error::InvalidInput(
                "max_iters and stall_window must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.hp.lambda = lambda;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Stalled,
    MaxIters,
    AllFrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub iteration: usize,
    pub t: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub iteration: usize,
    pub coordinate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics<T> {
    /// Total CG iterations spent per SGD iteration.
    pub cg_iterations: Vec<usize>,
    pub cg_unconverged: usize,
    pub truncations: Vec<TruncationEvent>,
    /// Stochastic loss estimate per iteration (empty for exact descent).
    pub loss_estimates: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult<T> {
    pub objective: Objective,
    pub lambda: T,
    pub mask: Vec<bool>,
    pub t_final: Vec<T>,
    pub w_final: Vec<T>,
    pub iterations: usize,
    pub termination: Termination,
    pub trajectory: Vec<Snapshot<T>>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Real> SelectionResult<T> {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        crate::linop::mask_indices(&self.mask)
    }

    /// Trajectory rows `(iteration, coordinate, t_value)`.
    pub fn trajectory_rows(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.trajectory.iter().flat_map(|s| {
            s.t.iter()
                .enumerate()
                .map(move |(j, &v)| (s.iteration, j, v))
        })
    }
}

/// `t = 1 - exp(-w ⊙ w)`, in `[0, 1)`.
pub fn map_w_to_t<T: Real>(w: &[T]) -> Vec<T> {
    w.iter().map(|&x| T::one() - (-x * x).exp()).collect()
}

/// Inverse on `[0, 1)`: `w = sqrt(-ln(1 - t))`.
pub fn map_t_to_w<T: Real>(t: &[T]) -> Vec<T> {
    t.iter().map(|&x| (-(T::one() - x).ln()).sqrt()).collect()
}

/// `d/dw = d/dt ⊙ (2 w ⊙ exp(-w ⊙ w))`.
pub fn chain_rule<T: Real>(grad_t: &[T], w: &[T]) -> Result<Vec<T>> {
    check_len(w.len(), grad_t.len())?;
    Ok(grad_t
        .iter()
        .zip(w)
        .map(|(&g, &x)| g * T::lit(2.0) * x * (-x * x).exp())
        .collect())
}

/// The linear system restricted to the support of `t`.
pub struct ReducedSystem<'a, T: Real> {
    lt: LtOperator<'a, T>,
}

pub fn reduce_support<'a, T: Real>(
    k: &'a dyn SymmetricOperator<T>,
    t: &[T],
    delta: T,
) -> Result<ReducedSystem<'a, T>> {
    Ok(ReducedSystem {
        lt: LtOperator::reduced(k, t, delta)?,
    })
}

impl<'a, T: Real> ReducedSystem<'a, T> {
    pub fn operator(&self) -> &LtOperator<'a, T> {
        &self.lt
    }

    pub fn dim(&self) -> usize {
        self.lt.support().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lt.support().is_empty()
    }

    /// `q = L_t^-1 (t ⊙ r)` at full length, solved by CG on the support.
    pub fn solve_weighted(&self, r: &[T], cg: &CgConfig<T>) -> Result<(Vec<T>, SolveReport<T>)> {
        check_len(self.lt.base_dim(), r.len())?;
        let rhs = crate::estimator::weight(&self.lt, &self.lt.gather(r));
        let (q, rep) = cg_solve(&self.lt, &rhs, cg)?;
        Ok((self.lt.embed(&q), rep))
    }

    /// Same solve by dense factorization on the support.
    pub fn dense_solve_weighted(&self, r: &[T]) -> Result<Vec<T>> {
        check_len(self.lt.base_dim(), r.len())?;
        let rhs = crate::estimator::weight(&self.lt, &self.lt.gather(r));
        Ok(self.lt.embed(&dense_solve_oracle(&self.lt, &rhs)?))
    }
}

struct StepOutcome<T> {
    grad: Vec<T>,
    loss: Option<T>,
    cg_iterations: usize,
    cg_unconverged: usize,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    b1t: T,
    b2t: T,
}

fn descend<T, G>(
    n: usize,
    objective: Objective,
    cfg: &OptimizerConfig<T>,
    mut gradient: G,
) -> Result<SelectionResult<T>>
where
    T: Real,
    G: FnMut(&[T], usize) -> Result<StepOutcome<T>>,
{
    cfg.validate()?;
    let half = vec![T::lit(0.5); n];
    let mut w = map_t_to_w(&half);
    let mut t = map_w_to_t(&w);
    let mut frozen = vec![false; n];
    let mut adam = Adam {
        m: vec![T::zero(); n],
        v: vec![T::zero(); n],
        b1t: T::one(),
        b2t: T::one(),
    };
    let mut diag = Diagnostics {
        cg_iterations: Vec::new(),
        cg_unconverged: 0,
        truncations: Vec::new(),
        loss_estimates: Vec::new(),
    };
    let mut trajectory = Vec::new();
    let mut stall = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;

    let truncate = |iteration: usize,
                    t: &mut [T],
                    w: &mut [T],
                    frozen: &mut [bool],
                    diag: &mut Diagnostics<T>| {
        for j in 0..t.len() {
            if !frozen[j] && t[j] < cfg.epsilon {
                t[j] = T::zero();
                w[j] = T::zero();
                frozen[j] = true;
                diag.truncations.push(TruncationEvent {
                    iteration,
                    coordinate: j,
                });
            }
        }
    };

    for iter in 0..cfg.max_iters {
        truncate(iter, &mut t, &mut w, &mut frozen, &mut diag);
        if cfg.trajectory_stride > 0 && iter % cfg.trajectory_stride == 0 {
            trajectory.push(Snapshot {
                iteration: iter,
                t: t.clone(),
            });
        }
        if frozen.iter().all(|&f| f) {
            termination = Termination::AllFrozen;
            break;
        }

        let step = gradient(&t, iter)?;
        if !all_finite(&step.grad) {
            return Err(Error::Diverged {
                iteration: iter,
                last_t: t.iter().map(|x| x.as_f64()).collect(),
            });
        }
        diag.cg_iterations.push(step.cg_iterations);
        diag.cg_unconverged += step.cg_unconverged;
        if let Some(l) = step.loss {
            diag.loss_estimates.push(l);
        }
        let gw = chain_rule(&step.grad, &w)?;

        match cfg.schedule {
            StepSchedule::Constant { rate } => {
                for j in (0..n).filter(|&j| !frozen[j]) {
                    w[j] -= rate * gw[j];
                }
            }
            StepSchedule::Adam {
                rate,
                beta1,
                beta2,
                stabilizer,
            } => {
                adam.b1t *= beta1;
                adam.b2t *= beta2;
                for j in (0..n).filter(|&j| !frozen[j]) {
                    adam.m[j] = beta1 * adam.m[j] + (T::one() - beta1) * gw[j];
                    adam.v[j] = beta2 * adam.v[j] + (T::one() - beta2) * gw[j] * gw[j];
                    let mhat = adam.m[j] / (T::one() - adam.b1t);
                    let vhat = adam.v[j] / (T::one() - adam.b2t);
                    w[j] -= rate * mhat / (vhat.sqrt() + stabilizer);
                }
            }
        }
        if !all_finite(&w) {
            return Err(Error::Diverged {
                iteration: iter,
                last_t: t.iter().map(|x| x.as_f64()).collect(),
            });
        }

        let t_new = map_w_to_t(&w);
        let moved = t_new
            .iter()
            .zip(&t)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        t = t_new;
        iterations = iter + 1;
        if moved < cfg.stall_tolerance {
            stall += 1;
            if stall >= cfg.stall_window {
                termination = Termination::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
    }

    truncate(iterations, &mut t, &mut w, &mut frozen, &mut diag);
    if cfg.trajectory_stride > 0 && trajectory.last().map(|s| s.iteration) != Some(iterations) {
        trajectory.push(Snapshot {
            iteration: iterations,
            t: t.clone(),
        });
    }
    let mask = t.iter().map(|&x| x > cfg.tau).collect();
    Ok(SelectionResult {
        objective,
        lambda: cfg.hp.lambda,
        mask,
        t_final: t,
        w_final: w,
        iterations,
        termination,
        trajectory,
        diagnostics: diag,
    })
}

/// Stochastic gradient of `objective` at `t` with probes keyed by
/// `(seed, iteration)`.
pub fn stochastic_gradient<T: Real>(
    objective: Objective,
    k: &dyn SymmetricOperator<T>,
    t: &[T],
    hp: &HyperParams<T>,
    cg: &CgConfig<T>,
    opts: ProbeOptions<'_, T>,
) -> Result<crate::estimator::GradientEstimate<T>> {
    match objective {
        Objective::Cssp | Objective::NystromTrace => grad_f_stochastic(k, t, hp, cg, opts),
        Objective::NystromFrobenius => grad_g_stochastic(k, t, hp, cg, opts),
    }
}

/// Runs stochastic continuous selection on the operator `k` (`X^T X` for
/// CSSP, the kernel matrix for Nyström).
pub fn run_selection<T: Real>(
    objective: Objective,
    k: &dyn SymmetricOperator<T>,
    cfg: &OptimizerConfig<T>,
) -> Result<SelectionResult<T>> {
    let mut warm = WarmStarts::new();
    descend(k.dim(), objective, cfg, |t, iter| {
        let opts = ProbeOptions {
            seed: cfg.seed,
            iteration: iter as u64,
            keep_per_probe: false,
            warm: cfg.warm_start.then_some(&mut warm),
        };
        let est = stochastic_gradient(objective, k, t, &cfg.hp, &cfg.cg, opts)?;
        Ok(StepOutcome {
            grad: est.grad,
            loss: Some(est.loss_estimate),
            cg_iterations: est.cg_iterations,
            cg_unconverged: est.cg_unconverged,
        })
    })
}

/// Batch gradient descent with exact dense gradients. Desk-scale reference
/// for comparing against the stochastic trajectory.
pub fn run_selection_exact<T: Real>(
    objective: Objective,
    k: &DMatrix<T>,
    cfg: &OptimizerConfig<T>,
) -> Result<SelectionResult<T>> {
    check_len(k.nrows(), k.ncols())?;
    let (delta, lambda) = (cfg.hp.delta, cfg.hp.lambda);
    descend(k.nrows(), objective, cfg, |t, _| {
        let mut grad = match objective {
            Objective::Cssp | Objective::NystromTrace => grad_f_dense(k, t, delta, lambda)?,
            Objective::NystromFrobenius => grad_g_dense(k, t, delta, lambda)?,
        };
        for (g, &x) in grad.iter_mut().zip(t) {
            if x == T::zero() {
                *g = T::zero();
            }
        }
        Ok(StepOutcome {
            grad,
            loss: None,
            cg_iterations: 0,
            cg_unconverged: 0,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig<T> {
    /// First lambda tried; `None` takes the `target_k`-th largest gain
    /// `-d loss / d t_j` at `t = 1/2`.
    pub initial: Option<T>,
    /// Step factor while only one side of the target has been seen.
    pub expand: T,
    pub max_runs: usize,
    /// A run selecting between `target_k` and `target_k + slack` columns
    /// ends the search; its mask is then trimmed to `target_k`.
    pub slack: usize,
}

impl<T: Real> Default for SearchConfig<T> {
    fn default() -> Self {
        Self {
            initial: None,
            expand: T::lit(4.0),
            max_runs: 12,
            slack: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRun<T> {
    pub lambda: T,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch<T> {
    pub lambda: T,
    /// The chosen run, with its mask trimmed or padded to exactly
    /// `target_k` columns by final weight.
    pub result: SelectionResult<T>,
    pub runs: Vec<SearchRun<T>>,
    /// Selected count of the chosen run before the exact-k adjustment.
    pub raw_selected: usize,
    /// True when the budget ran out before a run landed within
    /// `[target_k, target_k + slack]`.
    pub exhausted: bool,
}

/// Searches lambda on a log scale for a run selecting `target_k` columns.
///
/// The selected count is treated as non-increasing in lambda. When no run
/// hits `target_k` within the budget, the closest run at or above the target
/// is kept (the closest below it if none is), and its mask is trimmed or
/// padded to exactly `target_k` columns by final weight.
pub fn search_lambda<T: Real>(
    target_k: usize,
    objective: Objective,
    k: &dyn SymmetricOperator<T>,
    cfg: &OptimizerConfig<T>,
    search: &SearchConfig<T>,
) -> Result<LambdaSearch<T>> {
    cfg.validate()?;
    search_with(
        target_k,
        k.dim(),
        search,
        || gradient_at_half(objective, k, cfg),
        |lambda| run_selection(objective, k, &cfg.with_lambda(lambda)),
    )
}

/// [`search_lambda`] driving [`run_selection_exact`].
pub fn search_lambda_exact<T: Real>(
    target_k: usize,
    objective: Objective,
    k: &DMatrix<T>,
    cfg: &OptimizerConfig<T>,
    search: &SearchConfig<T>,
) -> Result<LambdaSearch<T>> {
    cfg.validate()?;
    let scale = || {
        let half = vec![T::lit(0.5); k.nrows()];
        match objective {
            Objective::Cssp | Objective::NystromTrace => {
                grad_f_dense(k, &half, cfg.hp.delta, T::zero())
            }
            Objective::NystromFrobenius => grad_g_dense(k, &half, cfg.hp.delta, T::zero()),
        }
    };
    search_with(target_k, k.nrows(), search, scale, |lambda| {
        run_selection_exact(objective, k, &cfg.with_lambda(lambda))
    })
}

fn search_with<T, S, R>(
    target_k: usize,
    n: usize,
    search: &SearchConfig<T>,
    scale: S,
    mut run: R,
) -> Result<LambdaSearch<T>>
where
    T: Real,
    S: FnOnce() -> Result<Vec<T>>,
    R: FnMut(T) -> Result<SelectionResult<T>>,
{
    if target_k > n {
        return Err(Error::InvalidInput(format!(
            "target_k = {target_k} exceeds n = {n}"
        )));
    }
    if search.max_runs == 0 || !(search.expand > T::one()) {
        return Err(Error::InvalidInput(
            "invalid lambda search configuration".into(),
        ));
    }
    let mut lambda = if target_k == n {
        T::zero()
    } else {
        match search.initial {
            Some(l) => l,
            None => initial_lambda(&scale()?, target_k, search.expand),
        }
    };
    // Largest lambda seen giving more than target_k, smallest giving fewer.
    let mut below: Option<(T, usize)> = None;
    let mut above: Option<(T, usize)> = None;
    let mut runs = Vec::new();
    let mut best: Option<SelectionResult<T>> = None;
    let mut hit = false;

    for _ in 0..search.max_runs {
        let res = run(lambda)?;
        let count = res.selected();
        runs.push(SearchRun {
            lambda,
            selected: count,
        });
        let better = match &best {
            None => true,
            Some(b) => closer(count, b.selected(), target_k),
        };
        if better {
            best = Some(res);
        }
        if count >= target_k && count <= target_k + search.slack {
            hit = true;
            break;
        }
        if count > target_k {
            if below.is_none_or(|(b, _)| lambda > b) {
                below = Some((lambda, count));
            }
        } else if above.is_none_or(|(a, _)| lambda < a) {
            above = Some((lambda, count));
        }
        lambda = next_lambda(&runs, below, above, target_k, search.expand);
    }
    if !hit {
        log::warn!(
            "lambda search for k = {target_k} used its budget of {} runs without an exact hit",
            search.max_runs
        );
    }
    let mut result = best.expect("at least one run");
    let raw_selected = result.selected();
    result.mask = top_k_mask(&result.t_final, &result.mask, target_k);
    Ok(LambdaSearch {
        lambda: result.lambda,
        result,
        runs,
        raw_selected,
        exhausted: !hit,
    })
}

/// Whether a run selecting `a` columns beats one selecting `b`. Counts at or
/// above the target win over counts below it, since trimming by weight is
/// better founded than padding with truncated coordinates; within a side the
/// closer count wins.
fn closer(a: usize, b: usize, k: usize) -> bool {
    match (a >= k, b >= k) {
        (true, false) => true,
        (false, true) => false,
        _ => a.abs_diff(k) < b.abs_diff(k),
    }
}

/// Counts fall off roughly like a power of lambda, so steps are taken on
/// `(log lambda, log count)`: interpolation inside a bracket, secant
/// extrapolation from the last two runs otherwise.
fn next_lambda<T: Real>(
    runs: &[SearchRun<T>],
    below: Option<(T, usize)>,
    above: Option<(T, usize)>,
    k: usize,
    expand: T,
) -> T {
    let lnc = |c: usize| T::from_usize(c.max(1)).unwrap().ln();
    let target = if k == 0 { T::lit(0.5).ln() } else { lnc(k) };
    match (below, above) {
        (Some((lo, c_lo)), Some((hi, c_hi))) if lo > T::zero() && lo < hi => {
            let frac = if c_hi == 0 {
                T::from_usize(c_lo - k).unwrap() / T::from_usize(c_lo).unwrap()
            } else {
                (lnc(c_lo) - target) / (lnc(c_lo) - lnc(c_hi))
            };
            let frac = frac.max(T::lit(0.15)).min(T::lit(0.85));
            (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
        }
        (Some((lo, _)), Some((hi, _))) if lo > T::zero() => (lo * hi).sqrt(),
        (Some(_), Some((hi, _))) => hi / expand,
        (Some((lo, _)), None) if lo > T::zero() => {
            lo * secant_factor(runs, target, expand).unwrap_or(expand)
        }
        (Some(_), None) => T::one(),
        (None, Some((hi, c))) if c > 0 => {
            hi * secant_factor(runs, target, expand).unwrap_or(T::one() / expand)
        }
        (None, Some((hi, _))) => hi / expand,
        (None, None) => unreachable!("every run updates one side"),
    }
}

/// Multiplicative step from the last run towards the target count along the
/// line through the last two runs, limited to `[1.25, expand^2]` in either
/// direction.
fn secant_factor<T: Real>(runs: &[SearchRun<T>], target: T, expand: T) -> Option<T> {
    let [.., a, b] = runs else { return None };
    if a.selected == 0 || b.selected == 0 || !(a.lambda > T::zero()) || a.lambda == b.lambda {
        return None;
    }
    let lnc = |c: usize| T::from_usize(c).unwrap().ln();
    let slope = (lnc(b.selected) - lnc(a.selected)) / (b.lambda.ln() - a.lambda.ln());
    if !(slope < T::lit(-0.05)) {
        return None;
    }
    let step = (target - lnc(b.selected)) / slope;
    let (lo, hi) = (T::lit(1.25).ln(), T::lit(2.0) * expand.ln());
    let mag = step.abs().max(lo).min(hi);
    Some(if step >= T::zero() {
        mag.exp()
    } else {
        (-mag).exp()
    })
}

/// Keeps exactly `k` coordinates: drops the smallest weights from an
/// oversized mask, or adds the largest unselected weights to an undersized
/// one. Ties go to the lower index.
pub fn top_k_mask<T: Real>(t: &[T], mask: &[bool], k: usize) -> Vec<bool> {
    let count = mask.iter().filter(|&&s| s).count();
    if count == k {
        return mask.to_vec();
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    // Selected first, then by weight descending, then by index.
    order.sort_by(|&a, &b| {
        mask[b]
            .cmp(&mask[a])
            .then(t[b].partial_cmp(&t[a]).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut out = vec![false; t.len()];
    for &j in order.iter().take(k) {
        out[j] = true;
    }
    out
}

/// Unpenalized stochastic gradient at `t = 1/2`.
fn gradient_at_half<T: Real>(
    objective: Objective,
    k: &dyn SymmetricOperator<T>,
    cfg: &OptimizerConfig<T>,
) -> Result<Vec<T>> {
    let n = k.dim();
    let hp = HyperParams {
        lambda: T::zero(),
        ..cfg.hp
    };
    let est = stochastic_gradient(
        objective,
        k,
        &vec![T::lit(0.5); n],
        &hp,
        &cfg.cg,
        ProbeOptions::new(cfg.seed ^ 0x5ca1_ab1e, u64::MAX),
    )?;
    Ok(est.grad)
}

/// A coordinate keeps growing roughly while its gain `-g_j` exceeds lambda,
/// so the `k`-th largest gain is a first guess for selecting `k`.
fn initial_lambda<T: Real>(grad: &[T], k: usize, expand: T) -> T {
    let mut gains: Vec<T> = grad.iter().map(|&g| (-g).max(T::zero())).collect();
    gains.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let guess = match k {
        0 => gains.first().map(|&g| g * expand),
        _ => gains.get(k - 1).copied(),
    };
    match guess {
        Some(g) if g > T::zero() && g.finite() => g,
        _ => T::one(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_basics() {
        assert_eq!(map_w_to_t(&[0.0]), vec![0.0]);
        let t = map_w_to_t(&[2f64.ln().sqrt()]);
        assert!((t[0] - 0.5).abs() < 1e-15);
        let t = map_w_to_t(&[0.3, -0.5, 1.2]);
        assert!(t[0] < t[1] && t[1] < t[2]);
        assert!(t.iter().all(|&x| (0.0..1.0).contains(&x)));
        let w = map_t_to_w(&[0.5]);
        assert!((w[0] - 2f64.ln().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chain_rule_values() {
        assert_eq!(
            chain_rule(&[5.0, -3.0], &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let g = chain_rule(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        for v in g {
            assert!((v - 2.0 / std::f64::consts::E).abs() < 1e-15);
        }
        assert!(chain_rule(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn top_k_trims_and_pads() {
        let t = [0.9, 0.6, 0.95, 0.7, 0.0];
        let mask = [true, true, true, true, false];
        assert_eq!(
            top_k_mask(&t, &mask, 2),
            vec![true, false, true, false, false]
        );
        let small = [false, false, true, false, false];
        assert_eq!(
            top_k_mask(&t, &small, 2),
            vec![true, false, true, false, false]
        );
        let tie = [0.5, 0.5, 0.5];
        assert_eq!(top_k_mask(&tie, &[true; 3], 1), vec![true, false, false]);
    }

    #[test]
    fn config_validation() {
        let cfg = OptimizerConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        let bad = OptimizerConfig {
            epsilon: 0.6,
            ..cfg
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            schedule: StepSchedule::Constant { rate: 0.0 },
            ..cfg
        };
        assert!(bad.validate().is_err());
    }
}
