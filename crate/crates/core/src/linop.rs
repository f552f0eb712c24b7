//! Matrix-free linear operators.
//!
//! Every downstream routine touches the data matrix `X` or the kernel matrix
//! `K` only through the products exposed by [`SymmetricOperator`]. Besides the
//! full product `K v`, operators expose products restricted to an index set
//! (`K[S,S] v`, `K[S,:] v`, `K[:,S] v`). Once coordinates are frozen at zero
//! the optimizer works on the support only, and these restricted products let
//! each backend skip the work the full product would waste.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::{all_finite, dot, Real};

/// Row-major dense matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        check_len(rows * cols, data.len())?;
        if let Some(pos) = data.iter().position(|x| !x.finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            check_len(n, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_row_major(m, n, data)
    }

    pub fn from_dmatrix(m: &DMatrix<T>) -> Result<Self> {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_dmatrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Columns `j` with `mask[j]` set, as an `m x k` matrix.
    pub fn select_columns(&self, mask: &[bool]) -> DMatrix<T> {
        let idx: Vec<usize> = mask_indices(mask);
        DMatrix::from_fn(self.rows, idx.len(), |i, c| self.get(i, idx[c]))
    }

    pub fn frobenius_sq(&self) -> T {
        dot(&self.data, &self.data)
    }

    /// `out = X v` for `v` of length `cols`.
    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    /// `out = X^T u` for `u` of length `rows`.
    pub fn tr_mul_vec_into(&self, u: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &ui) in u.iter().enumerate() {
            if ui == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += ui * x;
            }
        }
    }

    /// Centers every column and scales it to unit population variance.
    /// Constant columns become zero; their indices are returned.
    pub fn standardize(&mut self) -> Vec<usize> {
        let m = T::from_usize(self.rows).expect("row count fits the scalar type");
        let mut constant = Vec::new();
        for j in 0..self.cols {
            let mean = (0..self.rows).map(|i| self.get(i, j)).sum::<T>() / m;
            let var = (0..self.rows)
                .map(|i| (self.get(i, j) - mean) * (self.get(i, j) - mean))
                .sum::<T>()
                / m;
            let sd = var.sqrt();
            let scale = if sd > T::eps() * mean.abs().max(T::one()) {
                T::one() / sd
            } else {
                constant.push(j);
                T::zero()
            };
            for i in 0..self.rows {
                let v = &mut self.data[i * self.cols + j];
                *v = (*v - mean) * scale;
            }
        }
        constant
    }
}

pub(crate) fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(j, &s)| s.then_some(j))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    GramOfDense,
    ExplicitKernel,
    Materialized,
}

/// A symmetric positive semi-definite `n x n` operator available only
/// through matrix-vector products.
///
/// Implementations must be pure: `apply_into` may be called concurrently
/// from several threads.
pub trait SymmetricOperator<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> OperatorKind;

    /// `out = K v`. Panics if the slice lengths differ from `dim()`.
    fn apply_into(&self, v: &[T], out: &mut [T]);

    /// Checked `K v`.
    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        check_len(self.dim(), v.len())?;
        let mut out = vec![T::zero(); self.dim()];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    /// Column `j` of `K`.
    fn column(&self, j: usize) -> Vec<T> {
        let mut e = vec![T::zero(); self.dim()];
        e[j] = T::one();
        let mut out = vec![T::zero(); self.dim()];
        self.apply_into(&e, &mut out);
        out
    }

    /// `out = K[S,S] v` where `v` and `out` have length `|S|`.
    fn apply_principal_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let n = self.dim();
        if idx.len() == n {
            return self.apply_into(v, out);
        }
        let full = scatter(n, idx, v);
        let mut y = vec![T::zero(); n];
        self.apply_into(&full, &mut y);
        gather_into(&y, idx, out);
    }

    /// `out = K[S,:] v` where `v` has length `n` and `out` has length `|S|`.
    fn apply_rows_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let n = self.dim();
        if idx.len() == n {
            return self.apply_into(v, out);
        }
        let mut y = vec![T::zero(); n];
        self.apply_into(v, &mut y);
        gather_into(&y, idx, out);
    }

    /// `out = K[:,S] v` where `v` has length `|S|` and `out` has length `n`.
    fn apply_cols_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let n = self.dim();
        if idx.len() == n {
            return self.apply_into(v, out);
        }
        let full = scatter(n, idx, v);
        self.apply_into(&full, out);
    }

    /// Dense `n x n` copy. Only for small instances and test oracles.
    fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = self.column(j);
            for i in 0..n {
                k[(i, j)] = col[i];
            }
        }
        k
    }
}

pub(crate) fn scatter<T: Real>(n: usize, idx: &[usize], v: &[T]) -> Vec<T> {
    let mut full = vec![T::zero(); n];
    for (&j, &x) in idx.iter().zip(v) {
        full[j] = x;
    }
    full
}

pub(crate) fn gather_into<T: Real>(full: &[T], idx: &[usize], out: &mut [T]) {
    for (o, &j) in out.iter_mut().zip(idx) {
        *o = full[j];
    }
}

/// `K = X^T X`, applied as two products with `X`; `K` is never formed.
#[derive(Clone, Debug)]
pub struct GramOperator<T> {
    x: DenseMatrix<T>,
}

pub fn gram_operator<T: Real>(x: DenseMatrix<T>) -> GramOperator<T> {
    GramOperator { x }
}

impl<T: Real> GramOperator<T> {
    pub fn data(&self) -> &DenseMatrix<T> {
        &self.x
    }

    /// `y = X[:,S] v`.
    fn mul_cols(&self, idx: &[usize], v: &[T]) -> Vec<T> {
        (0..self.x.rows())
            .map(|i| {
                let row = self.x.row(i);
                let mut acc = T::zero();
                for (&j, &vj) in idx.iter().zip(v) {
                    acc += row[j] * vj;
                }
                acc
            })
            .collect()
    }

    /// `out = X[:,S]^T y`.
    fn tr_mul_cols(&self, idx: &[usize], y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &yi) in y.iter().enumerate() {
            let row = self.x.row(i);
            for (o, &j) in out.iter_mut().zip(idx) {
                *o += row[j] * yi;
            }
        }
    }
}

impl<T: Real> SymmetricOperator<T> for GramOperator<T> {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::GramOfDense
    }

    fn apply_into(&self, v: &[T], out: &mut [T]) {
        assert_eq!(v.len(), self.dim(), "gram operator: input length");
        assert_eq!(out.len(), self.dim(), "gram operator: output length");
        let mut y = vec![T::zero(); self.x.rows()];
        self.x.mul_vec_into(v, &mut y);
        self.x.tr_mul_vec_into(&y, out);
    }

    fn column(&self, j: usize) -> Vec<T> {
        let col: Vec<T> = (0..self.x.rows()).map(|i| self.x.get(i, j)).collect();
        let mut out = vec![T::zero(); self.dim()];
        self.x.tr_mul_vec_into(&col, &mut out);
        out
    }

    fn apply_principal_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let y = self.mul_cols(idx, v);
        self.tr_mul_cols(idx, &y, out);
    }

    fn apply_rows_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let mut y = vec![T::zero(); self.x.rows()];
        self.x.mul_vec_into(v, &mut y);
        self.tr_mul_cols(idx, &y, out);
    }

    fn apply_cols_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        let y = self.mul_cols(idx, v);
        self.x.tr_mul_vec_into(&y, out);
    }
}

/// An explicitly stored symmetric matrix.
#[derive(Clone, Debug)]
pub struct MaterializedOperator<T> {
    n: usize,
    k: Vec<T>,
}

impl<T: Real> MaterializedOperator<T> {
    /// Wraps a dense symmetric matrix. Asymmetry above `1e-10` relative is
    /// rejected.
    pub fn new(k: &DMatrix<T>) -> Result<Self> {
        let (r, c) = k.shape();
        check_len(r, c)?;
        if r == 0 {
            return Err(Error::InvalidInput("empty operator".into()));
        }
        let scale = k.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let tol = T::lit(1e-10) * scale.max(T::one());
        let mut data = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let x = k[(i, j)];
                if !x.finite() {
                    return Err(Error::NonFinite(format!("operator entry ({i}, {j})")));
                }
                if (x - k[(j, i)]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "operator is not symmetric at ({i}, {j})"
                    )));
                }
                data.push(x);
            }
        }
        Ok(Self { n: r, k: data })
    }

    /// Forms `X^T X` explicitly. Cheaper than [`GramOperator`] whenever
    /// `n <= m`.
    pub fn from_gram(x: &DenseMatrix<T>) -> Self {
        let n = x.cols();
        let mut k = vec![T::zero(); n * n];
        for i in 0..x.rows() {
            let row = x.row(i);
            for a in 0..n {
                let ra = row[a];
                if ra == T::zero() {
                    continue;
                }
                let dst = &mut k[a * n..(a + 1) * n];
                for (d, &rb) in dst.iter_mut().zip(row) {
                    *d += ra * rb;
                }
            }
        }
        Self { n, k }
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        &self.k[i * self.n..(i + 1) * self.n]
    }
}

impl<T: Real> SymmetricOperator<T> for MaterializedOperator<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Materialized
    }

    fn apply_into(&self, v: &[T], out: &mut [T]) {
        assert_eq!(v.len(), self.n, "materialized operator: input length");
        assert_eq!(out.len(), self.n, "materialized operator: output length");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    fn column(&self, j: usize) -> Vec<T> {
        self.row(j).to_vec()
    }

    fn apply_principal_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        if 2 * idx.len() > self.n {
            // Dense index sets: contiguous rows beat gathered access.
            let full = scatter(self.n, idx, v);
            for (o, &i) in out.iter_mut().zip(idx) {
                *o = dot(self.row(i), &full);
            }
            return;
        }
        for (o, &i) in out.iter_mut().zip(idx) {
            let row = self.row(i);
            let mut acc = T::zero();
            for (&j, &vj) in idx.iter().zip(v) {
                acc += row[j] * vj;
            }
            *o = acc;
        }
    }

    fn apply_rows_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        for (o, &i) in out.iter_mut().zip(idx) {
            *o = dot(self.row(i), v);
        }
    }

    fn apply_cols_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (&j, &vj) in idx.iter().zip(v) {
            for (o, &kj) in out.iter_mut().zip(self.row(j)) {
                *o += kj * vj;
            }
        }
    }

    fn to_dense(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.n, self.n, &self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
}

/// `K_ij = exp(-|x_i - x_j|^2 / sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub sigma: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn rbf(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.finite() {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Rbf,
            sigma,
        })
    }

    #[inline]
    pub fn eval_sq_dist(&self, d2: T) -> T {
        match self.family {
            KernelFamily::Rbf => (-d2 / (self.sigma * self.sigma)).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    Materialized,
    OnTheFly,
}

#[derive(Clone, Copy, Debug)]
pub struct KernelOptions {
    /// Largest `n` allowed in materialized mode.
    pub materialize_cap: usize,
    /// Rows per block in on-the-fly mode.
    pub block_size: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            materialize_cap: 4096,
            block_size: 512,
        }
    }
}

#[derive(Clone, Debug)]
enum KernelStorage<T> {
    Materialized(MaterializedOperator<T>),
    OnTheFly { block_size: usize },
}

/// Kernel matrix over a point set (one point per row of `points`).
#[derive(Clone, Debug)]
pub struct KernelOperator<T> {
    points: DenseMatrix<T>,
    spec: KernelSpec<T>,
    storage: KernelStorage<T>,
}

pub fn kernel_operator<T: Real>(
    points: DenseMatrix<T>,
    spec: KernelSpec<T>,
    mode: KernelMode,
) -> Result<KernelOperator<T>> {
    kernel_operator_with(points, spec, mode, KernelOptions::default())
}

pub fn kernel_operator_with<T: Real>(
    points: DenseMatrix<T>,
    spec: KernelSpec<T>,
    mode: KernelMode,
    opts: KernelOptions,
) -> Result<KernelOperator<T>> {
    KernelSpec::rbf(spec.sigma)?;
    // Largest possible squared distance must stay finite.
    let max_sq = (0..points.rows())
        .map(|i| dot(points.row(i), points.row(i)))
        .fold(T::zero(), |a, b| a.max(b));
    if !(max_sq * T::lit(4.0)).finite() {
        return Err(Error::NonFinite("pairwise distance overflow".into()));
    }
    let mut op = KernelOperator {
        points,
        spec,
        storage: KernelStorage::OnTheFly {
            block_size: opts.block_size.max(1),
        },
    };
    if mode == KernelMode::Materialized {
        let n = op.points.rows();
        if n > opts.materialize_cap {
            return Err(Error::InvalidInput(format!(
                "kernel with n = {n} exceeds materialization cap {}",
                opts.materialize_cap
            )));
        }
        let mut k = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let d2 = op.sq_dist(i, j);
                if !d2.finite() {
                    return Err(Error::NonFinite(format!(
                        "distance between points {i} and {j}"
                    )));
                }
                let v = op.spec.eval_sq_dist(d2);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        op.storage = KernelStorage::Materialized(MaterializedOperator { n, k });
    }
    Ok(op)
}

impl<T: Real> KernelOperator<T> {
    #[inline]
    fn sq_dist(&self, i: usize, j: usize) -> T {
        let mut acc = T::zero();
        for (a, b) in self.points.row(i).iter().zip(self.points.row(j)) {
            let d = *a - *b;
            acc += d * d;
        }
        acc
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> T {
        match &self.storage {
            KernelStorage::Materialized(m) => m.k[i * m.n + j],
            KernelStorage::OnTheFly { .. } => self.spec.eval_sq_dist(self.sq_dist(i, j)),
        }
    }

    pub fn mode(&self) -> KernelMode {
        match self.storage {
            KernelStorage::Materialized(_) => KernelMode::Materialized,
            KernelStorage::OnTheFly { .. } => KernelMode::OnTheFly,
        }
    }

    pub fn spec(&self) -> KernelSpec<T> {
        self.spec
    }

    pub fn points(&self) -> &DenseMatrix<T> {
        &self.points
    }

    /// `out[a] = sum_b K[rows[a], cols[b]] v[b]`, computed block by block.
    fn on_the_fly(&self, rows: &[usize], cols: &[usize], v: &[T], out: &mut [T], block: usize) {
        out.par_chunks_mut(block)
            .zip(rows.par_chunks(block))
            .for_each(|(o_blk, r_blk)| {
                for (o, &i) in o_blk.iter_mut().zip(r_blk) {
                    let mut acc = T::zero();
                    for (&j, &vj) in cols.iter().zip(v) {
                        acc += self.spec.eval_sq_dist(self.sq_dist(i, j)) * vj;
                    }
                    *o = acc;
                }
            });
    }
}

impl<T: Real> SymmetricOperator<T> for KernelOperator<T> {
    fn dim(&self) -> usize {
        self.points.rows()
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::ExplicitKernel
    }

    fn apply_into(&self, v: &[T], out: &mut [T]) {
        match &self.storage {
            KernelStorage::Materialized(m) => m.apply_into(v, out),
            KernelStorage::OnTheFly { block_size } => {
                let n = self.dim();
                assert_eq!(v.len(), n, "kernel operator: input length");
                assert_eq!(out.len(), n, "kernel operator: output length");
                let all: Vec<usize> = (0..n).collect();
                self.on_the_fly(&all, &all, v, out, *block_size);
            }
        }
    }

    fn column(&self, j: usize) -> Vec<T> {
        (0..self.dim()).map(|i| self.entry(i, j)).collect()
    }

    fn apply_principal_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        match &self.storage {
            KernelStorage::Materialized(m) => m.apply_principal_into(idx, v, out),
            KernelStorage::OnTheFly { block_size } => {
                self.on_the_fly(idx, idx, v, out, *block_size)
            }
        }
    }

    fn apply_rows_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        match &self.storage {
            KernelStorage::Materialized(m) => m.apply_rows_into(idx, v, out),
            KernelStorage::OnTheFly { block_size } => {
                let all: Vec<usize> = (0..self.dim()).collect();
                self.on_the_fly(idx, &all, v, out, *block_size)
            }
        }
    }

    fn apply_cols_into(&self, idx: &[usize], v: &[T], out: &mut [T]) {
        match &self.storage {
            KernelStorage::Materialized(m) => m.apply_cols_into(idx, v, out),
            KernelStorage::OnTheFly { block_size } => {
                let all: Vec<usize> = (0..self.dim()).collect();
                self.on_the_fly(&all, idx, v, out, *block_size)
            }
        }
    }
}

/// Identifies one Rademacher probe inside an optimization run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProbeKey {
    pub seed: u64,
    pub iteration: u64,
    pub index: u64,
}

impl ProbeKey {
    /// Counter-based stream seed: the probe depends only on the key, never
    /// on the order in which probes are generated.
    pub fn stream_seed(&self) -> u64 {
        let mut h = splitmix64(self.seed ^ 0x243f_6a88_85a3_08d3);
        h = splitmix64(h ^ self.iteration);
        splitmix64(h ^ self.index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A vector of i.i.d. signs.
#[derive(Clone, Debug, PartialEq)]
pub struct RademacherProbe<T> {
    pub z: Vec<T>,
    pub seed: u64,
}

pub fn draw_probe<T: Real>(n: usize, seed: u64) -> RademacherProbe<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(n);
    while z.len() < n {
        let bits = rng.next_u64();
        let take = (n - z.len()).min(64);
        for b in 0..take {
            z.push(if (bits >> b) & 1 == 1 {
                T::one()
            } else {
                -T::one()
            });
        }
    }
    RademacherProbe { z, seed }
}

pub fn draw_keyed_probe<T: Real>(n: usize, key: ProbeKey) -> RademacherProbe<T> {
    draw_probe(n, key.stream_seed())
}

/// Draws from a caller-owned generator; the recorded seed is the first
/// word taken from it.
pub fn draw_probe_from<T: Real, R: Rng>(n: usize, rng: &mut R) -> RademacherProbe<T> {
    draw_probe(n, rng.next_u64())
}

/// Factored diagonal estimator `Bz ⊙ Cz`, unbiased for `Diag(B C^T)`.
pub fn estimate_diagonal_factored<T, B, C>(b_apply: B, c_apply: C, z: &[T]) -> Result<Vec<T>>
where
    T: Real,
    B: Fn(&[T]) -> Vec<T>,
    C: Fn(&[T]) -> Vec<T>,
{
    let bz = b_apply(z);
    let cz = c_apply(z);
    check_len(z.len(), bz.len())?;
    check_len(z.len(), cz.len())?;
    let out: Vec<T> = bz.iter().zip(&cz).map(|(x, y)| *x * *y).collect();
    if !all_finite(&out) {
        return Err(Error::NonFinite("diagonal estimate".into()));
    }
    Ok(out)
}
