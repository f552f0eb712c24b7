#![allow(dead_code)]

use landmark::linop::DenseMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

pub fn dense(m: &DMatrix<f64>) -> DenseMatrix<f64> {
    DenseMatrix::from_dmatrix(m).unwrap()
}

/// `U V^T + 0.1 noise` with `U: m x r`, `V: n x r`, standardized.
pub fn low_rank_plus_noise(seed: u64, m: usize, n: usize, r: usize) -> DenseMatrix<f64> {
    let mut g = rng(seed);
    let u = gaussian(&mut g, m, r);
    let v = gaussian(&mut g, n, r);
    let noise = gaussian(&mut g, m, n);
    let mut x = dense(&(u * v.transpose() + noise * 0.1));
    x.standardize();
    x
}

/// `n` points in the plane drawn from `c` isotropic Gaussian clusters.
pub fn clustered_points(seed: u64, n: usize, c: usize) -> DenseMatrix<f64> {
    let mut g = rng(seed);
    let centers: Vec<[f64; 2]> = (0..c)
        .map(|_| [g.gen_range(-6.0..6.0), g.gen_range(-6.0..6.0)])
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let ctr = centers[i % c];
            let a: f64 = g.sample(StandardNormal);
            let b: f64 = g.sample(StandardNormal);
            vec![ctr[0] + 0.7 * a, ctr[1] + 0.7 * b]
        })
        .collect();
    DenseMatrix::from_rows(&rows).unwrap()
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let a = gaussian(rng, n, rank);
    &a * a.transpose()
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(0.5)).collect()
}
