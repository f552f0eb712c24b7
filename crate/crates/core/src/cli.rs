//! Command-line driver: ingestion, selection runs, benchmark sweeps, reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{greedy_select, uniform_select, GreedyInput};
use crate::error::{Error, Result};
use crate::estimator::HyperParams;
use crate::eval::{
    approximation_factor, best_rank_k_error, cssp_error, nystrom_errors, ErrorNorm,
    EvaluationReport,
};
use crate::linop::{
    gram_operator, kernel_operator, DenseMatrix, KernelMode, KernelOptions, KernelSpec,
    MaterializedOperator, SymmetricOperator,
};
use crate::optimizer::{
    run_selection, search_lambda, Objective, OptimizerConfig, SearchConfig, SelectionResult,
    StepSchedule,
};
use crate::solver::CgConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SelectCssp,
    SelectNystrom,
    Benchmark,
    Evaluate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Continuous,
    Uniform,
    Greedy,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Continuous => "continuous",
            Method::Uniform => "uniform",
            Method::Greedy => "greedy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub family: KernelName,
    pub sigma: f64,
}

/// Norm of the Nyström objective and of its reference error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NystromNorm {
    Frobenius,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Adam,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub schedule: ScheduleKind,
    pub rate: f64,
    pub max_iters: usize,
    pub stall_tolerance: f64,
    pub stall_window: usize,
    pub warm_start: bool,
    pub trajectory_stride: usize,
    pub cg_tolerance: f64,
    pub cg_max_iters: Option<usize>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let o = OptimizerConfig::<f64>::default();
        Self {
            schedule: ScheduleKind::Adam,
            rate: 0.03,
            max_iters: o.max_iters,
            stall_tolerance: o.stall_tolerance,
            stall_window: o.stall_window,
            warm_start: false,
            trajectory_stride: o.trajectory_stride,
            cg_tolerance: o.cg.rel_tolerance,
            cg_max_iters: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub initial: Option<f64>,
    pub max_runs: usize,
    pub slack: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let s = SearchConfig::<f64>::default();
        Self {
            initial: None,
            max_runs: s.max_runs,
            slack: s.slack,
        }
    }
}

/// Everything a run needs. Serialized as JSON; `--config` loads one and
/// flags override its fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub standardize: bool,
    pub delta: f64,
    pub lambda: Option<f64>,
    pub target_k: Option<usize>,
    pub mc_size: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tau: f64,
    pub optimizer: OptimizerSettings,
    pub search: SearchSettings,
    /// Points are the CSV rows when set; otherwise columns are selected.
    pub kernel: Option<KernelSettings>,
    pub nystrom_norm: NystromNorm,
    pub methods: Vec<Method>,
    pub k_grid: Vec<usize>,
    pub trials: usize,
    /// Benchmark threads; 0 uses every available core.
    pub workers: usize,
    pub dump_trajectory: bool,
    /// Leaves `wall_time_s` empty so reports are byte-reproducible.
    pub deterministic: bool,
    /// Selection to score with `evaluate`.
    pub mask: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            input: None,
            output_dir: PathBuf::from("out"),
            standardize: true,
            delta: 1.0,
            lambda: None,
            target_k: None,
            mc_size: 10,
            seed: 0,
            epsilon: 1e-3,
            tau: 0.5,
            optimizer: OptimizerSettings::default(),
            search: SearchSettings::default(),
            kernel: None,
            nystrom_norm: NystromNorm::Frobenius,
            methods: vec![Method::Continuous, Method::Uniform, Method::Greedy],
            k_grid: Vec::new(),
            trials: 1,
            workers: 0,
            dump_trajectory: false,
            deterministic: false,
            mask: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| invalid("no command given"))
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| invalid("no input file given"))
    }

    pub fn objective(&self) -> Objective {
        match (self.kernel, self.nystrom_norm) {
            (None, _) => Objective::Cssp,
            (Some(_), NystromNorm::Frobenius) => Objective::NystromFrobenius,
            (Some(_), NystromNorm::Trace) => Objective::NystromTrace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command()?;
        self.input()?;
        self.optimizer_config(self.lambda.unwrap_or(0.0), self.seed)
            .validate()?;
        if let Some(k) = self.kernel {
            KernelSpec::rbf(k.sigma)?;
        }
        if !(self.search.initial.unwrap_or(1.0) > 0.0) {
            return Err(invalid("initial search lambda must be positive"));
        }
        match command {
            Command::SelectCssp | Command::SelectNystrom => {
                if self.lambda.is_some() == self.target_k.is_some() {
                    return Err(invalid("give exactly one of lambda and target_k"));
                }
                match (command, self.kernel) {
                    (Command::SelectCssp, Some(_)) => {
                        return Err(invalid("select-cssp takes no kernel"))
                    }
                    (Command::SelectNystrom, None) => {
                        return Err(invalid("select-nystrom needs a kernel"))
                    }
                    _ => {}
                }
            }
            Command::Benchmark => {
                if self.methods.is_empty() || self.k_grid.is_empty() || self.trials == 0 {
                    return Err(invalid("benchmark needs methods, a k grid and trials >= 1"));
                }
                if self.lambda.is_some() || self.target_k.is_some() {
                    return Err(invalid("benchmark sets the target from the k grid"));
                }
            }
            Command::Evaluate => {
                if self.mask.is_none() {
                    return Err(invalid("evaluate needs a mask file"));
                }
            }
        }
        Ok(())
    }

    pub fn optimizer_config(&self, lambda: f64, seed: u64) -> OptimizerConfig<f64> {
        let o = &self.optimizer;
        let schedule = match o.schedule {
            ScheduleKind::Adam => StepSchedule::adam(o.rate),
            ScheduleKind::Constant => StepSchedule::Constant { rate: o.rate },
        };
        OptimizerConfig {
            schedule,
            max_iters: o.max_iters,
            stall_tolerance: o.stall_tolerance,
            stall_window: o.stall_window,
            epsilon: self.epsilon,
            tau: self.tau,
            hp: HyperParams {
                delta: self.delta,
                lambda,
                mc_size: self.mc_size,
            },
            seed,
            cg: CgConfig {
                rel_tolerance: o.cg_tolerance,
                max_iters: o.cg_max_iters,
                ..CgConfig::default()
            },
            warm_start: o.warm_start,
            trajectory_stride: if self.dump_trajectory {
                o.trajectory_stride
            } else {
                0
            },
        }
    }

    pub fn search_config(&self) -> SearchConfig<f64> {
        SearchConfig {
            initial: self.search.initial,
            max_runs: self.search.max_runs,
            slack: self.search.slack,
            ..SearchConfig::default()
        }
    }
}

/// Command-line flags. Any flag given overrides the `--config` file.
#[derive(Debug, Parser)]
#[command(
    name = "landmark",
    version,
    about = "Landmark column selection for CSSP and Nyström"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// What to run; may also come from the config file.
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    /// CSV data matrix, one row per sample.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory for reports and selections [default: out].
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Sparsity penalty.
    #[arg(long, conflicts_with = "target_k")]
    pub lambda: Option<f64>,
    /// Search for a penalty that selects this many columns.
    #[arg(long)]
    pub target_k: Option<usize>,
    /// Regularization shift [default: 1].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Probe vectors per gradient estimate [default: 10].
    #[arg(long)]
    pub mc_size: Option<usize>,
    /// Kernel family; selects the Nystrom problem in benchmarks.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelName>,
    /// Kernel bandwidth.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Nystrom error norm [default: frobenius].
    #[arg(long, value_enum)]
    pub nystrom_norm: Option<NystromNorm>,
    /// Comma-separated benchmark methods.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated selection sizes.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Trials per (method, k) cell [default: 1].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed; trial seeds derive from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Freeze a coordinate once its weight drops below this [default: 1e-3].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Threshold for the final mask [default: 0.5].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Step schedule [default: adam].
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    /// Step size [default: 0.03].
    #[arg(long)]
    pub rate: Option<f64>,
    /// Iteration cap per run [default: 2000].
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Seed each linear solve with the previous iteration's solution.
    #[arg(long)]
    pub warm_start: bool,
    /// Accept counts within this distance of the target before trimming.
    #[arg(long)]
    pub search_slack: Option<usize>,
    /// Optimizer runs the penalty search may spend [default: 12].
    #[arg(long)]
    pub search_max_runs: Option<usize>,
    /// Write weight trajectories as CSV.
    #[arg(long)]
    pub dump_trajectory: bool,
    /// Threads for benchmark cells; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Omit wall times so reruns give identical files.
    #[arg(long)]
    pub deterministic: bool,
    /// Skip centering and scaling of the input columns.
    #[arg(long)]
    pub no_standardize: bool,
    /// Selection to score: JSON indices or a plain index list.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            output_dir => c.output_dir,
            delta => c.delta,
            mc_size => c.mc_size,
            methods => c.methods,
            k_grid => c.k_grid,
            trials => c.trials,
            seed => c.seed,
            epsilon => c.epsilon,
            tau => c.tau,
            nystrom_norm => c.nystrom_norm,
            schedule => c.optimizer.schedule,
            rate => c.optimizer.rate,
            max_iters => c.optimizer.max_iters,
            search_slack => c.search.slack,
            search_max_runs => c.search.max_runs,
            workers => c.workers,
        );
        if self.command.is_some() {
            c.command = self.command;
        }
        if self.input.is_some() {
            c.input = self.input;
        }
        if self.mask.is_some() {
            c.mask = self.mask;
        }
        if let Some(l) = self.lambda {
            c.lambda = Some(l);
            c.target_k = None;
        }
        if let Some(k) = self.target_k {
            c.target_k = Some(k);
            c.lambda = None;
        }
        match (self.kernel, self.sigma) {
            (Some(family), Some(sigma)) => c.kernel = Some(KernelSettings { family, sigma }),
            (Some(_), None) if c.kernel.is_none() => return Err(invalid("--kernel needs --sigma")),
            (_, Some(sigma)) => match &mut c.kernel {
                Some(k) => k.sigma = sigma,
                None => return Err(invalid("--sigma needs --kernel")),
            },
            _ => {}
        }
        c.optimizer.warm_start |= self.warm_start;
        c.dump_trajectory |= self.dump_trajectory;
        c.deterministic |= self.deterministic;
        c.standardize &= !self.no_standardize;
        Ok(c)
    }
}

/// A parsed input table.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub matrix: DenseMatrix<f64>,
    pub header: Option<Vec<String>>,
    /// Columns that were constant (zeroed by standardization).
    pub constant_columns: Vec<usize>,
}

/// Reads a rectangular numeric CSV. A first row with any non-numeric cell
/// is taken as a header. Rows and columns in errors are 1-based.
pub fn ingest_csv(path: &Path, standardize: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let mut header = None;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Csv {
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if idx == 0 && parsed.iter().any(Option::is_none) {
            header = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Csv {
                row: line,
                column: record.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        for (j, (v, cell)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match v {
                Some(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::Csv {
                        row: line,
                        column: j + 1,
                        message: format!("not a finite number: {cell:?}"),
                    })
                }
            }
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("{}: no numeric rows", path.display())));
    }
    let mut matrix = DenseMatrix::from_row_major(rows, cols, data)?;
    let constant_columns = if standardize {
        let c = matrix.standardize();
        if !c.is_empty() {
            log::warn!("constant columns set to zero: {c:?}");
        }
        c
    } else {
        Vec::new()
    };
    Ok(Dataset {
        matrix,
        header,
        constant_columns,
    })
}

/// Seed of trial `trial`, derived from the master seed by counter.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    // splitmix64 of the counter, keyed by the master seed.
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(trial.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The problem a config describes, with the operator built.
pub struct Problem {
    pub objective: Objective,
    pub data: DenseMatrix<f64>,
    pub op: Box<dyn SymmetricOperator<f64>>,
}

impl Problem {
    pub fn build(cfg: &RunConfig, data: DenseMatrix<f64>) -> Result<Self> {
        let objective = cfg.objective();
        let op: Box<dyn SymmetricOperator<f64>> = match cfg.kernel {
            Some(k) => {
                let spec = KernelSpec::rbf(k.sigma)?;
                let mode = if data.rows() <= KernelOptions::default().materialize_cap {
                    KernelMode::Materialized
                } else {
                    KernelMode::OnTheFly
                };
                Box::new(kernel_operator(data.clone(), spec, mode)?)
            }
            None => cssp_operator(&data),
        };
        Ok(Self {
            objective,
            data,
            op,
        })
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    fn is_kernel(&self) -> bool {
        self.objective != Objective::Cssp
    }

    fn dense_kernel(&self) -> Result<DMatrix<f64>> {
        let cap = KernelOptions::default().materialize_cap;
        if self.dim() > cap {
            return Err(Error::SizeGuard {
                op: "kernel evaluation",
                n: self.dim(),
                max: cap,
            });
        }
        Ok(self.op.to_dense())
    }

    fn reference_norm(&self) -> ErrorNorm {
        match self.objective {
            Objective::NystromTrace => ErrorNorm::Trace,
            _ => ErrorNorm::FrobeniusSq,
        }
    }

    pub fn greedy(&self, k: usize) -> Result<Vec<bool>> {
        let input = if self.is_kernel() {
            GreedyInput::Kernel(self.op.as_ref())
        } else {
            GreedyInput::Data(&self.data)
        };
        Ok(greedy_select(input, k)?.mask)
    }
}

/// `X^T X`, materialized when that is cheap.
pub fn cssp_operator(x: &DenseMatrix<f64>) -> Box<dyn SymmetricOperator<f64>> {
    if x.cols() <= x.rows() || x.cols() <= 2048 {
        Box::new(MaterializedOperator::from_gram(x))
    } else {
        Box::new(gram_operator(x.clone()))
    }
}

/// Errors of one mask against the dense problem.
struct Scorer {
    kernel: Option<DMatrix<f64>>,
    norm: ErrorNorm,
}

impl Scorer {
    fn new(problem: &Problem) -> Result<Self> {
        Ok(Self {
            kernel: if problem.is_kernel() {
                Some(problem.dense_kernel()?)
            } else {
                None
            },
            norm: problem.reference_norm(),
        })
    }

    fn reference(&self, data: &DenseMatrix<f64>, k: usize) -> Result<f64> {
        match &self.kernel {
            Some(kd) => best_rank_k_error(kd, k, self.norm),
            None => best_rank_k_error(&data.to_dmatrix(), k, ErrorNorm::FrobeniusSq),
        }
    }

    /// `(frobenius_sq, trace, error in the reference norm)`.
    fn errors(&self, data: &DenseMatrix<f64>, mask: &[bool]) -> Result<(f64, Option<f64>, f64)> {
        match &self.kernel {
            Some(kd) => {
                let (f, t) = nystrom_errors(kd, mask)?;
                let t = t.max(0.0);
                let e = if self.norm == ErrorNorm::Trace { t } else { f };
                Ok((f, Some(t), e))
            }
            None => {
                let f = cssp_error(data, mask)?;
                Ok((f, None, f))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: String,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub k: usize,
    pub trials: usize,
    pub failures: usize,
    pub mean_frobenius_sq_error: f64,
    pub std_frobenius_sq_error: f64,
    pub mean_trace_error: Option<f64>,
    pub std_trace_error: Option<f64>,
    pub mean_approximation_factor: Option<f64>,
    pub std_approximation_factor: Option<f64>,
    pub mean_selected: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub objective: Objective,
    pub n: usize,
    pub records: Vec<EvaluationReport>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
}

/// Mean and sample standard deviation.
fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn summarize(
    cfg: &RunConfig,
    records: &[EvaluationReport],
    failures: &[RunFailure],
) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &k in &cfg.k_grid {
        for m in &cfg.methods {
            let name = m.name();
            let rows: Vec<&EvaluationReport> = records
                .iter()
                .filter(|r| r.k == k && r.method == name)
                .collect();
            let failed = failures
                .iter()
                .filter(|f| f.k == k && f.method == name)
                .count();
            let col = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| {
                mean_std(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let frob = col(&|r| Some(r.frobenius_sq_error));
            let trace = col(&|r| r.trace_error);
            let factor = col(&|r| r.approximation_factor);
            let sel = col(&|r| Some(r.selected as f64));
            out.push(SummaryRow {
                method: name.to_owned(),
                k,
                trials: rows.len(),
                failures: failed,
                mean_frobenius_sq_error: frob.map_or(f64::NAN, |p| p.0),
                std_frobenius_sq_error: frob.map_or(f64::NAN, |p| p.1),
                mean_trace_error: trace.map(|p| p.0),
                std_trace_error: trace.map(|p| p.1),
                mean_approximation_factor: factor.map(|p| p.0),
                std_approximation_factor: factor.map(|p| p.1),
                mean_selected: sel.map_or(f64::NAN, |p| p.0),
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const REPORT_HEADER: &str = "method,k,trial,seed,frobenius_sq_error,trace_error,best_rank_k_error,approximation_factor,wall_time_s";

pub fn report_csv(records: &[EvaluationReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.k,
            r.trial,
            r.seed,
            r.frobenius_sq_error,
            opt(r.trace_error),
            r.best_rank_k_error,
            opt(r.approximation_factor),
            opt(r.wall_time_s)
        );
    }
    s
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "method,k,trials,failures,mean_frobenius_sq_error,std_frobenius_sq_error,mean_trace_error,std_trace_error,mean_approximation_factor,std_approximation_factor,mean_selected\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.k,
            r.trials,
            r.failures,
            r.mean_frobenius_sq_error,
            r.std_frobenius_sq_error,
            opt(r.mean_trace_error),
            opt(r.std_trace_error),
            opt(r.mean_approximation_factor),
            opt(r.std_approximation_factor),
            r.mean_selected
        );
    }
    s
}

/// Long format: one row per metric.
fn metrics_csv(records: &[EvaluationReport]) -> String {
    let mut s = String::from("method,k,metric,value,trial,seed\n");
    for r in records {
        let metrics = [
            ("frobenius_sq_error", Some(r.frobenius_sq_error)),
            ("trace_error", r.trace_error),
            ("best_rank_k_error", Some(r.best_rank_k_error)),
            ("approximation_factor", r.approximation_factor),
            ("wall_time_s", r.wall_time_s),
            ("selected", Some(r.selected as f64)),
        ];
        for (name, v) in metrics {
            if let Some(v) = v {
                let _ = writeln!(s, "{},{},{name},{v},{},{}", r.method, r.k, r.trial, r.seed);
            }
        }
    }
    s
}

pub fn trajectory_csv(result: &SelectionResult<f64>) -> String {
    let mut s = String::from("iteration,coordinate,t_value\n");
    for (i, j, t) in result.trajectory_rows() {
        let _ = writeln!(s, "{i},{j},{t}");
    }
    s
}

/// Continuous selection of exactly `k` columns.
fn continuous(
    cfg: &RunConfig,
    problem: &Problem,
    k: usize,
    seed: u64,
) -> Result<SelectionResult<f64>> {
    let ocfg = cfg.optimizer_config(0.0, seed);
    let found = search_lambda(
        k,
        problem.objective,
        problem.op.as_ref(),
        &ocfg,
        &cfg.search_config(),
    )?;
    let mut result = found.result;
    result.lambda = found.lambda;
    Ok(result)
}

struct Cell {
    method: Method,
    k: usize,
    trial: usize,
    seed: u64,
}

/// Runs every method x k x trial cell and writes the reports.
/// Single-run failures are recorded in the report, not returned.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    let data = ingest_csv(cfg.input()?, cfg.standardize)?.matrix;
    let problem = Problem::build(cfg, data)?;
    let n = problem.dim();
    if let Some(&k) = cfg.k_grid.iter().find(|&&k| k > n) {
        return Err(invalid(format!(
            "k = {k} exceeds the {n} candidate columns"
        )));
    }
    let scorer = Scorer::new(&problem)?;
    let references = cfg
        .k_grid
        .iter()
        .map(|&k| scorer.reference(&problem.data, k))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &k in &cfg.k_grid {
        for &method in &cfg.methods {
            for trial in 0..cfg.trials {
                let seed = trial_seed(cfg.seed, trial as u64);
                cells.push(Cell {
                    method,
                    k,
                    trial,
                    seed,
                });
            }
        }
    }
    let traj_dir = cfg.output_dir.join("trajectories");
    let run_cell = |c: &Cell| -> Result<EvaluationReport> {
        let start = Instant::now();
        let mask = match c.method {
            Method::Uniform => uniform_select(n, c.k, c.seed)?,
            Method::Greedy => problem.greedy(c.k)?,
            Method::Continuous => {
                let r = continuous(cfg, &problem, c.k, c.seed)?;
                if cfg.dump_trajectory {
                    let name = format!("continuous_k{}_trial{}.csv", c.k, c.trial);
                    write_atomic(&traj_dir.join(name), trajectory_csv(&r).as_bytes())?;
                }
                r.mask
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        let (frob, trace, err) = scorer.errors(&problem.data, &mask)?;
        let reference = references[cfg.k_grid.iter().position(|&k| k == c.k).unwrap()];
        Ok(EvaluationReport {
            method: c.method.name().to_owned(),
            k: c.k,
            trial: c.trial,
            seed: c.seed,
            frobenius_sq_error: frob,
            trace_error: trace,
            best_rank_k_error: reference,
            approximation_factor: approximation_factor(err, reference).ratio(),
            wall_time_s: (!cfg.deterministic).then_some(elapsed),
            selected: mask.iter().filter(|&&s| s).count(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<EvaluationReport>> =
        pool.install(|| cells.par_iter().map(run_cell).collect());

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (c, o) in cells.iter().zip(outcomes) {
        match o {
            Ok(r) => records.push(r),
            Err(e) => {
                log::error!(
                    "{} k={} trial={} failed: {e}",
                    c.method.name(),
                    c.k,
                    c.trial
                );
                failures.push(RunFailure {
                    method: c.method.name().to_owned(),
                    k: c.k,
                    trial: c.trial,
                    seed: c.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let summary = summarize(cfg, &records, &failures);
    let report = BenchmarkReport {
        objective: problem.objective,
        n,
        records,
        summary,
        failures,
    };
    let out = &cfg.output_dir;
    write_atomic(
        &out.join("report.csv"),
        report_csv(&report.records).as_bytes(),
    )?;
    write_atomic(
        &out.join("summary.csv"),
        summary_csv(&report.summary).as_bytes(),
    )?;
    write_atomic(
        &out.join("metrics.csv"),
        metrics_csv(&report.records).as_bytes(),
    )?;
    write_atomic(
        &out.join("report.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    write_atomic(&out.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub objective: Objective,
    pub lambda: f64,
    pub target_k: Option<usize>,
    pub indices: Vec<usize>,
    pub iterations: usize,
    pub termination: crate::optimizer::Termination,
    /// `(lambda, selected)` of every search run.
    pub search_runs: Vec<(f64, usize)>,
    pub t_final: Vec<f64>,
    pub cg_iterations_total: usize,
    pub cg_unconverged: usize,
}

/// `select-cssp` and `select-nystrom`.
pub fn run_select(cfg: &RunConfig) -> Result<SelectionOutput> {
    let data = ingest_csv(cfg.input()?, cfg.standardize)?.matrix;
    let problem = Problem::build(cfg, data)?;
    let (result, runs) = match (cfg.lambda, cfg.target_k) {
        (Some(lambda), _) => {
            let cfg = cfg.optimizer_config(lambda, cfg.seed);
            let r = run_selection(problem.objective, problem.op.as_ref(), &cfg)?;
            let runs = vec![(lambda, r.selected())];
            (r, runs)
        }
        (None, Some(k)) => {
            if k > problem.dim() {
                return Err(invalid(format!(
                    "target_k = {k} exceeds n = {}",
                    problem.dim()
                )));
            }
            let found = search_lambda(
                k,
                problem.objective,
                problem.op.as_ref(),
                &cfg.optimizer_config(0.0, cfg.seed),
                &cfg.search_config(),
            )?;
            let runs = found.runs.iter().map(|r| (r.lambda, r.selected)).collect();
            let mut r = found.result;
            r.lambda = found.lambda;
            (r, runs)
        }
        (None, None) => return Err(invalid("give exactly one of lambda and target_k")),
    };
    let out = SelectionOutput {
        objective: problem.objective,
        lambda: result.lambda,
        target_k: cfg.target_k,
        indices: result.indices(),
        iterations: result.iterations,
        termination: result.termination,
        search_runs: runs,
        t_final: result.t_final.clone(),
        cg_iterations_total: result.diagnostics.cg_iterations.iter().sum(),
        cg_unconverged: result.diagnostics.cg_unconverged,
    };
    let dir = &cfg.output_dir;
    write_atomic(
        &dir.join("selection.json"),
        &serde_json::to_vec_pretty(&out)?,
    )?;
    if cfg.dump_trajectory {
        write_atomic(
            &dir.join("trajectory.csv"),
            trajectory_csv(&result).as_bytes(),
        )?;
    }
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    Ok(out)
}

/// Reads selected indices: a JSON object with `indices`, a JSON array, or
/// plain text separated by commas or whitespace.
pub fn read_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    let indices: Vec<usize> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(o)) => match o.get("indices") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(invalid("mask JSON has no \"indices\" field")),
        },
        Ok(v @ serde_json::Value::Array(_)) => serde_json::from_value(v)?,
        _ => text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| invalid(format!("bad index {s:?} in mask file")))
            })
            .collect::<Result<_>>()?,
    };
    let mut mask = vec![false; n];
    for j in indices {
        if j >= n {
            return Err(invalid(format!("mask index {j} out of range for n = {n}")));
        }
        mask[j] = true;
    }
    Ok(mask)
}

/// `evaluate`: scores a given selection.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvaluationReport> {
    let data = ingest_csv(cfg.input()?, cfg.standardize)?.matrix;
    let problem = Problem::build(cfg, data)?;
    let path = cfg
        .mask
        .as_deref()
        .ok_or_else(|| invalid("evaluate needs a mask file"))?;
    let mask = read_mask(path, problem.dim())?;
    let k = mask.iter().filter(|&&s| s).count();
    let scorer = Scorer::new(&problem)?;
    let reference = scorer.reference(&problem.data, k)?;
    let (frob, trace, err) = scorer.errors(&problem.data, &mask)?;
    let report = EvaluationReport {
        method: "given".into(),
        k,
        trial: 0,
        seed: cfg.seed,
        frobenius_sq_error: frob,
        trace_error: trace,
        best_rank_k_error: reference,
        approximation_factor: approximation_factor(err, reference).ratio(),
        wall_time_s: None,
        selected: k,
    };
    write_atomic(
        &cfg.output_dir.join("evaluation.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(report)
}

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    PartialFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::PartialFailure => 2,
        }
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.command()? {
        Command::SelectCssp | Command::SelectNystrom => {
            let out = run_select(cfg)?;
            let idx: Vec<String> = out.indices.iter().map(usize::to_string).collect();
            println!("{}", idx.join(","));
        }
        Command::Benchmark => {
            let report = run_benchmark(cfg)?;
            for r in &report.summary {
                println!(
                    "{:<12} k={:<4} mean_frobenius_sq_error={:.6e} mean_factor={}",
                    r.method,
                    r.k,
                    r.mean_frobenius_sq_error,
                    r.mean_approximation_factor
                        .map_or("-".into(), |f| format!("{f:.4}"))
                );
            }
            if !report.failures.is_empty() {
                return Ok(Outcome::PartialFailure);
            }
        }
        Command::Evaluate => {
            let r = run_evaluate(cfg)?;
            println!(
                "k={} frobenius_sq_error={} best_rank_k_error={} approximation_factor={}",
                r.k,
                r.frobenius_sq_error,
                r.best_rank_k_error,
                opt(r.approximation_factor)
            );
        }
    }
    Ok(Outcome::Success)
}

/// Parses arguments, runs, and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.into_config().and_then(|c| execute(&c)) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
