//! Independent checks of the forward process: dense `nd × nd` algebra,
//! Monte Carlo over exact draws and over simulated SDE paths.

use holdpp_core::linalg::{BlockMatrix, State};
use holdpp_core::process::{
    build_diffusion, build_drift, conditional_score_last_block, forward_moments, initial_cov, sample_forward,
    ForwardKernel, HoldParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_params(rng: &mut impl Rng, order: usize, dim: usize) -> HoldParams {
    HoldParams {
        order,
        dim,
        gammas: (1..order).map(|_| rng.random_range(0.5..3.0)).collect(),
        xi: rng.random_range(0.5..5.0),
        inv_mass: rng.random_range(0.5..2.0),
        beta: rng.random_range(0.5..10.0),
        eps_num: rng.random_range(1e-3..0.1),
        horizon: 1.0,
    }
}

/// Solves a dense system by Gaussian elimination with partial pivoting.
fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[i * m + c].abs().total_cmp(&a[j * m + c].abs())).unwrap();
        for j in 0..m {
            a.swap(c * m + j, p * m + j);
        }
        b.swap(c, p);
        for r in c + 1..m {
            let f = a[r * m + c] / a[c * m + c];
            for j in c..m {
                a[r * m + j] -= f * a[c * m + j];
            }
            b[r] -= f * b[c];
        }
    }
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|j| a[c * m + j] * b[j]).sum();
        b[c] = (b[c] - s) / a[c * m + c];
    }
    b
}

fn dense_matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m).map(|i| (0..m).map(|j| a[i * m + j] * x[j]).sum()).collect()
}

#[test]
fn score_identity_against_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..100 {
        let order = 1 + trial % 4;
        let dim = 1 + (trial / 4) % 3;
        let p = random_params(&mut rng, order, dim);
        let t = rng.random_range(0.01..1.0);
        let q: Vec<f64> = (0..order * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = State::from_vec(order, dim, q).unwrap();
        let noise: Vec<f64> = (0..order * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = forward_moments(&p, &x0, t).unwrap();
        let x_t = sample_forward(&p, &x0, t, &noise).unwrap();
        let diff: Vec<f64> = x_t.as_slice().iter().zip(m.mean.as_slice()).map(|(a, b)| a - b).collect();
        let dense_score: Vec<f64> = dense_solve(&m.cov.kron_identity(dim), &diff).iter().map(|v| -v).collect();
        let ours = conditional_score_last_block(&m, &noise[(order - 1) * dim..]).unwrap();
        for (a, b) in ours.iter().zip(&dense_score[(order - 1) * dim..]) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-3), "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn exact_draws_match_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(&mut rng, 3, 2);
    let x0 = State::from_vec(3, 2, vec![0.5, -0.3, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let draws = 100_000;
    for &t in &[0.1, 0.5, 1.0] {
        let m = forward_moments(&p, &x0, t).unwrap();
        let kernel = ForwardKernel::new(&p, t).unwrap();
        let mut sum = [0.0; 6];
        let mut outer = [[0.0; 6]; 6];
        for _ in 0..draws {
            let noise: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = kernel.sample(&x0, &noise).unwrap();
            let dev: Vec<f64> = x.as_slice().iter().zip(m.mean.as_slice()).map(|(a, b)| a - b).collect();
            for i in 0..6 {
                sum[i] += x.as_slice()[i];
                for j in 0..6 {
                    outer[i][j] += dev[i] * dev[j];
                }
            }
        }
        let dense = m.cov.kron_identity(2);
        let nf = draws as f64;
        for i in 0..6 {
            let mean = sum[i] / nf;
            let se = (dense[i * 6 + i] / nf).sqrt();
            assert!((mean - m.mean.as_slice()[i]).abs() < 4.0 * se, "t={t} mean[{i}]");
            for j in 0..6 {
                let cov = outer[i][j] / nf;
                let expected = dense[i * 6 + j];
                // Var of a product of jointly Gaussian coordinates: Σii Σjj + Σij².
                let se = ((dense[i * 6 + i] * dense[j * 6 + j] + expected * expected) / nf).sqrt();
                assert!((cov - expected).abs() < 4.0 * se, "t={t} cov[{i},{j}] {cov} vs {expected}");
            }
        }
    }
}

#[test]
fn scalar_ou_variance_by_simulated_paths() {
    let p = HoldParams {
        order: 1,
        dim: 1,
        gammas: vec![],
        xi: 2.0,
        inv_mass: 1.0,
        beta: 1.0,
        eps_num: 0.01,
        horizon: 1.0,
    };
    let f = build_drift(&p).unwrap()[(0, 0)];
    let g = build_diffusion(&p).unwrap()[(0, 0)];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let paths = 20_000;
    let steps = 200;
    let dt = 0.5 / steps as f64;
    let mut sum_sq = 0.0;
    for _ in 0..paths {
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut x = 0.1 * z;
        for _ in 0..steps {
            let w: f64 = StandardNormal.sample(&mut rng);
            x += f * x * dt + g * dt.sqrt() * w;
        }
        sum_sq += x * x;
    }
    let empirical = sum_sq / paths as f64;
    let exact = forward_moments(&p, &State::zeros(1, 1), 0.5).unwrap().cov[(0, 0)];
    assert!((exact - 0.86602).abs() < 1e-5);
    // Standard error of a variance estimate: √(2/N) σ²; Euler bias is O(dt).
    let se = (2.0 / paths as f64).sqrt() * exact;
    assert!((empirical - exact).abs() < 4.0 * se + 0.01, "{empirical} vs {exact}");
}

#[test]
fn stationary_law_is_fixed_point() {
    let p = HoldParams::critically_damped(3, 2, 4.0, 1.5, 2.0, 1e-3, 1.0).unwrap();
    let s0 = BlockMatrix::identity(3).scale(1.5);
    for &t in &[0.0, 0.2, 1.0, 5.0] {
        let k = ForwardKernel::with_initial_cov(&p, &s0, t).unwrap();
        assert!(k.cov.sub(&s0).max_abs() < 1e-12, "t={t}");
        let mean = k.transition.apply(&State::zeros(3, 2));
        assert!(mean.as_slice().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn tiny_times_still_factor() {
    let p = HoldParams::critically_damped(3, 2, 6.0, 1.0, 10.0, 1e-9, 1.0).unwrap();
    for &t in &[0.0, 1e-9, 1e-7, 1e-6] {
        let k = ForwardKernel::new(&p, t).unwrap();
        let rec = k.chol.matmul(&k.chol.transpose());
        assert!(rec.sub(&k.cov).max_abs() <= 1e-10 * k.cov.max_abs() + 1e-12);
    }
}

fn matrix_strategy(n: usize) -> impl Strategy<Value = BlockMatrix> {
    proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| BlockMatrix::from_row_major(n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kronecker_consistency(
        (n, d, a, b, x) in (1usize..5, 1usize..4).prop_flat_map(|(n, d)| {
            (Just(n), Just(d), matrix_strategy(n), matrix_strategy(n), proptest::collection::vec(-3.0f64..3.0, n * d))
        })
    ) {
        let state = State::from_vec(n, d, x.clone()).unwrap();
        let blockwise = a.apply(&b.apply(&state));
        let dense = dense_matvec(&a.kron_identity(d), &dense_matvec(&b.kron_identity(d), &x));
        let scale = dense.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (p, q) in blockwise.as_slice().iter().zip(&dense) {
            prop_assert!((p - q).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn exp_semigroup(a in matrix_strategy(3), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let lhs = a.exp(s + t).unwrap();
        let rhs = a.exp(s).unwrap().matmul(&a.exp(t).unwrap());
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-9 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn cholesky_reconstruction(seed in 0u64..1000, t in 0.0f64..2.0, order in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, order, 1);
        let k = ForwardKernel::new(&p, t).unwrap();
        let rec = k.chol.matmul(&k.chol.transpose());
        prop_assert!(rec.sub(&k.cov).max_abs() <= 1e-10 * k.cov.max_abs());
    }

    #[test]
    fn moments_start_at_initial_cov(seed in 0u64..1000, order in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, order, 2);
        let x0 = State::from_data(order, &[0.3, -0.7]);
        let m = forward_moments(&p, &x0, 0.0).unwrap();
        prop_assert_eq!(&m.mean, &x0);
        prop_assert!(m.cov.sub(&initial_cov(&p).unwrap()).max_abs() < 1e-14);
    }
}
