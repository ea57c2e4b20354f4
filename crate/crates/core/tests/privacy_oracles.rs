//! Privacy accountant checks: the defining formula of the effective
//! correlation, monotone decay of the sensitivity, quadrature for the
//! Gaussian Rényi divergence and Monte Carlo for the auxiliary guess error.

use holdpp_core::linalg::BlockMatrix;
use holdpp_core::privacy::{
    aux_guess_mse, effective_correlation, gaussian_renyi_divergence, rdp_epsilon, sensitivity,
};
use holdpp_core::process::{build_drift, initial_cov, ForwardKernel, HoldParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_params(rng: &mut impl Rng) -> HoldParams {
    let order = rng.random_range(1..=4);
    HoldParams {
        order,
        dim: rng.random_range(1..=3),
        gammas: (1..order).map(|_| rng.random_range(0.5..4.0)).collect(),
        xi: rng.random_range(0.5..6.0),
        inv_mass: rng.random_range(0.5..2.0),
        beta: rng.random_range(0.5..10.0),
        eps_num: rng.random_range(1e-3..0.1),
        horizon: rng.random_range(0.5..2.0),
    }
}

#[test]
fn correlation_matches_defining_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let t = rng.random_range(0.05..p.horizon);
        let k = ForwardKernel::new(&p, t).unwrap();
        // (Eᵀ Σ⁻¹ E)⁻¹ = E⁻¹ Σ E⁻ᵀ
        let e_inv = build_drift(&p).unwrap().exp(-t).unwrap();
        let oracle = e_inv.matmul(&k.cov).matmul(&e_inv.transpose());
        let ours = effective_correlation(&p, t).unwrap();
        assert!(ours.sub(&oracle).max_abs() <= 1e-9 * oracle.max_abs(), "{p:?} t={t}");
    }
}

#[test]
fn sensitivity_strictly_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let grid: Vec<f64> = (0..50).map(|k| p.horizon * k as f64 / 49.0).collect();
        let df: Vec<f64> = grid.iter().map(|&t| sensitivity(&p, t, 1.0).unwrap()).collect();
        violations += df.windows(2).filter(|w| w[1] >= w[0]).count();
    }
    assert_eq!(violations, 0);
}

#[test]
fn bound_approaches_inverse_eps_num() {
    for order in 1..=4 {
        let mut p = HoldParams::critically_damped(order, 2, 3.0 * order as f64, 1.0, 10.0, 1.0, 1.0).unwrap();
        p.eps_num = 1e-4 * p.beta * p.inv_mass;
        let df0 = sensitivity(&p, 0.0, 2.5).unwrap();
        assert!(((df0 - 2.5 / p.eps_num) / df0).abs() < 1e-6);
    }
    let p = HoldParams::critically_damped(2, 2, 4.0, 1.0, 10.0, 1e-3, 1.0).unwrap();
    assert_eq!(rdp_epsilon(&p, 0.0, 4.0, 2.0).unwrap(), 4000.0);
}

/// `D_α(P ‖ Q) = ln ∫ p^α q^{1−α} / (α − 1)` on a uniform grid, in log space.
fn renyi_quadrature(log_p: impl Fn(&[f64]) -> f64, log_q: impl Fn(&[f64]) -> f64, alpha: f64, axes: &[(f64, f64)], m: usize) -> f64 {
    let h: Vec<f64> = axes.iter().map(|(lo, hi)| (hi - lo) / m as f64).collect();
    let cell: f64 = h.iter().product();
    let total = m.pow(axes.len() as u32);
    let mut sum = 0.0;
    let mut point = vec![0.0; axes.len()];
    for idx in 0..total {
        let mut r = idx;
        for (k, (lo, _)) in axes.iter().enumerate() {
            point[k] = lo + (r % m) as f64 * h[k] + 0.5 * h[k];
            r /= m;
        }
        sum += (alpha * log_p(&point) + (1.0 - alpha) * log_q(&point)).exp();
    }
    (sum * cell).ln() / (alpha - 1.0)
}

#[test]
fn renyi_closed_form_matches_quadrature_scalar() {
    let log_n = |x: f64, m: f64, v: f64| -0.5 * (x - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
    for &(var, shift, alpha) in &[(1.0, 1.0, 2.0), (0.3, 0.5, 1.5), (2.0, -1.2, 4.0)] {
        let closed = gaussian_renyi_divergence(&[shift], &BlockMatrix::identity(1).scale(var), alpha).unwrap();
        let span = 12.0 * var.sqrt() + shift.abs() * alpha;
        let quad = renyi_quadrature(
            |x| log_n(x[0], 0.0, var),
            |x| log_n(x[0], shift, var),
            alpha,
            &[(-span, span)],
            20_000,
        );
        assert!((quad - closed).abs() / closed < 0.01, "{quad} vs {closed}");
    }
}

#[test]
fn renyi_closed_form_matches_quadrature_bivariate() {
    let cov = BlockMatrix::from_rows(&[[1.0, 0.6], [0.6, 0.8]]);
    let inv = cov.inverse().unwrap();
    let det = 1.0 * 0.8 - 0.36;
    let log_n = |x: &[f64], m: [f64; 2]| {
        let a = x[0] - m[0];
        let b = x[1] - m[1];
        let q = inv[(0, 0)] * a * a + 2.0 * inv[(0, 1)] * a * b + inv[(1, 1)] * b * b;
        -0.5 * q - 0.5 * (4.0 * std::f64::consts::PI.powi(2) * det).ln()
    };
    let shift = [0.7, -0.4];
    for &alpha in &[1.5, 2.0, 3.0] {
        let closed = gaussian_renyi_divergence(&shift, &cov, alpha).unwrap();
        let quad = renyi_quadrature(
            |x| log_n(x, [0.0, 0.0]),
            |x| log_n(x, shift),
            alpha,
            &[(-9.0, 9.0), (-9.0, 9.0)],
            600,
        );
        assert!((quad - closed).abs() / closed < 0.01, "alpha {alpha}: {quad} vs {closed}");
    }
}

#[test]
fn aux_guess_error_by_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(order, dim, beta) in &[(2, 2, 10.0), (3, 2, 2.0), (4, 1, 5.0)] {
        let p = HoldParams::critically_damped(order, dim, 2.0, 1.3, beta, 1e-3, 1.0).unwrap();
        let chol = initial_cov(&p).unwrap().cholesky().unwrap();
        let draws = 100_000;
        let mut total = 0.0;
        for _ in 0..draws {
            for _ in 0..dim {
                let z: Vec<f64> = (0..order).map(|_| StandardNormal.sample(&mut rng)).collect();
                for i in 1..order {
                    let v: f64 = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
                    total += v * v;
                }
            }
        }
        let empirical = total / draws as f64;
        let formula = aux_guess_mse(&p).unwrap() * dim as f64;
        assert!((empirical / formula - 1.0).abs() < 0.02, "{empirical} vs {formula}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn renyi_increases_with_order(a in 1.01f64..5.0, b in 1.01f64..5.0, v in -2.0f64..2.0) {
        prop_assume!((a - b).abs() > 1e-6 && v != 0.0);
        let cov = BlockMatrix::from_rows(&[[1.5, 0.2], [0.2, 0.7]]);
        let shift = [v, 0.3];
        let da = gaussian_renyi_divergence(&shift, &cov, a).unwrap();
        let db = gaussian_renyi_divergence(&shift, &cov, b).unwrap();
        prop_assert_eq!(da < db, a < b);
    }

    #[test]
    fn epsilon_scales_with_diameter(seed in 0u64..500, t in 0.0f64..0.5, d1 in 0.1f64..5.0, d2 in 0.1f64..5.0) {
        let p = random_params(&mut ChaCha8Rng::seed_from_u64(seed));
        let e1 = rdp_epsilon(&p, t, d1, 2.0).unwrap();
        let e2 = rdp_epsilon(&p, t, d2, 2.0).unwrap();
        prop_assert!((e1 * d2 - e2 * d1).abs() <= 1e-9 * (e1 * d2).abs());
    }
}
