mod common;

use landmark::cssp::f_lambda_dense;
use landmark::estimator::HyperParams;
use landmark::linop::{DenseMatrix, MaterializedOperator};
use landmark::optimizer::{
    map_t_to_w, map_w_to_t, reduce_support, run_selection, run_selection_exact, search_lambda,
    Objective, OptimizerConfig, SearchConfig, Termination,
};
use landmark::solver::{dense_solve_oracle, CgConfig, LtOperator};
use rand::Rng;

use common::{dense, gaussian, random_psd, rng};

fn standardized(seed: u64, m: usize, n: usize) -> DenseMatrix<f64> {
    let mut x = dense(&gaussian(&mut rng(seed), m, n));
    x.standardize();
    x
}

fn config(lambda: f64, delta: f64, mc_size: usize) -> OptimizerConfig<f64> {
    OptimizerConfig {
        hp: HyperParams {
            delta,
            lambda,
            mc_size,
        },
        seed: 1,
        ..OptimizerConfig::default()
    }
}

#[test]
fn transform_inverse_and_monotone() {
    assert_eq!(map_w_to_t(&[0.0]), vec![0.0]);
    let half = map_w_to_t(&[2f64.ln().sqrt()])[0];
    assert!((half - 0.5).abs() < 1e-15);
    let w = map_t_to_w(&[0.1f64, 0.5, 0.9]);
    let back = map_w_to_t(&w);
    assert!((back[2] - 0.9).abs() < 1e-12);
    let t = map_w_to_t(&[-0.3, 0.5, -1.0, 2.0]);
    assert!(t[0] < t[1] && t[1] < t[2] && t[2] < t[3]);
}

#[test]
fn reduced_solve_without_zeros_is_the_full_solve() {
    let mut g = rng(1);
    let k = random_psd(&mut g, 8, 8);
    let op = MaterializedOperator::new(&k).unwrap();
    let t: Vec<f64> = (0..8).map(|_| g.gen_range(0.1..0.9)).collect();
    let r: Vec<f64> = (0..8).map(|_| g.gen_range(-1.0..1.0)).collect();
    let red = reduce_support(&op, &t, 1.0).unwrap();
    assert_eq!(red.dim(), 8);
    let full = LtOperator::new(&op, &t, 1.0).unwrap();
    let rhs: Vec<f64> = t.iter().zip(&r).map(|(a, b)| a * b).collect();
    let oracle = dense_solve_oracle(&full, &rhs).unwrap();
    let got = red.dense_solve_weighted(&r).unwrap();
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zeroed_coordinate_solves_to_exact_zero() {
    let mut g = rng(2);
    let k = random_psd(&mut g, 3, 3);
    let op = MaterializedOperator::new(&k).unwrap();
    let red = reduce_support(&op, &[0.4, 0.0, 0.7], 1.0).unwrap();
    let (q, _) = red
        .solve_weighted(&[1.0, 2.0, 3.0], &CgConfig::default())
        .unwrap();
    assert_eq!(q[1], 0.0);
    assert_eq!(red.dense_solve_weighted(&[1.0, 2.0, 3.0]).unwrap()[1], 0.0);
}

#[test]
fn huge_penalty_selects_nothing() {
    let x = standardized(3, 20, 10);
    let op = MaterializedOperator::from_gram(&x);
    let r = run_selection(Objective::Cssp, &op, &config(1e6, 1.0, 10)).unwrap();
    assert_eq!(r.selected(), 0);
    assert_eq!(r.termination, Termination::AllFrozen);
}

#[test]
fn zero_penalty_keeps_every_column_of_full_rank_data() {
    let x = standardized(4, 20, 10);
    let op = MaterializedOperator::from_gram(&x);
    let r = run_selection(Objective::Cssp, &op, &config(0.0, 1.0, 10)).unwrap();
    assert_eq!(r.mask, vec![true; 10]);

    // Adding a column never increases the unpenalized objective.
    for bits in 0u32..1 << 10 {
        let t: Vec<f64> = (0..10).map(|j| (bits >> j & 1) as f64).collect();
        let f = f_lambda_dense(&x, &t, 1.0, 0.0).unwrap();
        for j in (0..10).filter(|j| bits >> j & 1 == 0) {
            let mut u = t.clone();
            u[j] = 1.0;
            assert!(f_lambda_dense(&x, &u, 1.0, 0.0).unwrap() <= f + 1e-9);
        }
    }
}

/// Pixel-like data: sparse nonnegative strokes from a few prototypes.
fn digit_like(seed: u64, m: usize, n: usize) -> DenseMatrix<f64> {
    let mut g = rng(seed);
    let protos: Vec<Vec<f64>> = (0..6)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if g.gen_bool(0.3) {
                        g.gen_range(0.5..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let p = &protos[i % protos.len()];
            p.iter()
                .map(|&v| (v + 0.1 * g.gen_range(-1.0..1.0)).max(0.0))
                .collect()
        })
        .collect();
    let mut x = DenseMatrix::from_rows(&rows).unwrap();
    x.standardize();
    x
}

#[test]
fn weights_split_toward_the_corners() {
    let x = digit_like(5, 120, 40);
    let op = MaterializedOperator::from_gram(&x);
    let r = run_selection(Objective::Cssp, &op, &config(10.0, 10.0, 5)).unwrap();
    let outside = r
        .t_final
        .iter()
        .filter(|&&t| !(0.1..=0.9).contains(&t))
        .count();
    assert!(
        outside * 10 >= 9 * r.t_final.len(),
        "{outside} of {} at the corners",
        r.t_final.len()
    );
}

#[test]
fn exact_descent_selects_on_small_instance() {
    let x = standardized(6, 20, 8);
    let xd = x.to_dmatrix();
    let r = run_selection_exact(
        Objective::Cssp,
        &(xd.transpose() * &xd),
        &config(0.0, 1.0, 1),
    )
    .unwrap();
    assert_eq!(r.mask, vec![true; 8]);
}

#[test]
fn search_extremes() {
    let x = standardized(7, 20, 10);
    let op = MaterializedOperator::from_gram(&x);
    let cfg = config(0.0, 1.0, 10);
    let all = search_lambda(10, Objective::Cssp, &op, &cfg, &SearchConfig::default()).unwrap();
    assert_eq!(all.result.mask, vec![true; 10]);
    assert_eq!(all.lambda, 0.0);
    let none = search_lambda(0, Objective::Cssp, &op, &cfg, &SearchConfig::default()).unwrap();
    assert_eq!(none.result.selected(), 0);
}

#[test]
fn search_hits_target_within_budget() {
    let x = common::low_rank_plus_noise(8, 50, 30, 6);
    let op = MaterializedOperator::from_gram(&x);
    let r = search_lambda(
        5,
        Objective::Cssp,
        &op,
        &config(0.0, 1.0, 10),
        &SearchConfig::default(),
    )
    .unwrap();
    assert_eq!(r.result.selected(), 5);
    assert!(r.runs.len() <= 12);
    // Spot check of monotonicity over the runs taken.
    let mut runs = r.runs.clone();
    runs.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    assert!(
        runs.first().unwrap().selected >= runs.last().unwrap().selected,
        "{runs:?}"
    );
}

#[test]
fn runs_are_reproducible_per_seed() {
    let x = standardized(9, 25, 12);
    let op = MaterializedOperator::from_gram(&x);
    let cfg = config(0.5, 1.0, 5);
    let a = run_selection(Objective::NystromFrobenius, &op, &cfg).unwrap();
    let b = run_selection(Objective::NystromFrobenius, &op, &cfg).unwrap();
    assert_eq!(a.t_final, b.t_final);
}

#[test]
fn trajectory_has_stride_and_final_snapshot() {
    let x = standardized(10, 25, 6);
    let op = MaterializedOperator::from_gram(&x);
    let cfg = OptimizerConfig {
        max_iters: 35,
        stall_tolerance: 0.0,
        trajectory_stride: 10,
        ..config(0.0, 1.0, 2)
    };
    let r = run_selection(Objective::Cssp, &op, &cfg).unwrap();
    let its: Vec<usize> = r.trajectory.iter().map(|s| s.iteration).collect();
    assert_eq!(its, vec![0, 10, 20, 30, 35]);
    assert_eq!(r.termination, Termination::MaxIters);
    assert_eq!(r.trajectory_rows().count(), 5 * 6);
}
