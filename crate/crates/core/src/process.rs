//! The HOLD++ forward process `dx = (F ⊗ I_d) x dt + (G ⊗ I_d) dw`.
//!
//! `F` couples neighbouring blocks through `γᵢ` with friction `ξ` on the last
//! block; noise enters only the last block. The transition law is Gaussian
//! with mean `exp(Ft) x₀` and covariance
//! `L⁻¹ I + exp(Ft) (S₀ − L⁻¹ I) exp(Ft)ᵀ`, all in block-scalar form.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{BlockMatrix, State};
use crate::math;
use crate::{Error, Result};

/// Diagonal shift applied once when the covariance factor fails to factor.
pub const CHOLESKY_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldParams {
    /// Model order `n` (number of stacked blocks).
    pub order: usize,
    /// Data dimension `d`.
    pub dim: usize,
    /// Block couplings `γ₁ … γ_{n−1}`.
    pub gammas: Vec<f64>,
    /// Friction on the last block.
    pub xi: f64,
    /// Inverse mass `L⁻¹`; also the stationary variance.
    pub inv_mass: f64,
    /// Auxiliary variance factor: auxiliaries start with variance `β L⁻¹`.
    pub beta: f64,
    /// Initial variance of the data block.
    pub eps_num: f64,
    /// Diffusion end time `T`.
    pub horizon: f64,
}

impl HoldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidParameter(msg));
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.gammas.len() != self.order - 1 {
            return bad(format!(
                "expected {} gammas for order {}, got {}",
                self.order - 1,
                self.order,
                self.gammas.len()
            ));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("gammas must be positive, got {g}"));
        }
        for (name, v) in [
            ("xi", self.xi),
            ("inv_mass", self.inv_mass),
            ("beta", self.beta),
            ("eps_num", self.eps_num),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    /// Parameters whose drift has the single eigenvalue `−ξ/n` with full
    /// multiplicity. For `n = 2` this is the usual `ξ = 2γ₁`.
    pub fn critically_damped(
        order: usize,
        dim: usize,
        xi: f64,
        inv_mass: f64,
        beta: f64,
        eps_num: f64,
        horizon: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("order must be at least 1".into()));
        }
        let params = Self {
            order,
            dim,
            gammas: critical_gammas(order, xi)?,
            xi,
            inv_mass,
            beta,
            eps_num,
            horizon,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn state_len(&self) -> usize {
        self.order * self.dim
    }

    /// Variance `β L⁻¹` of each auxiliary coordinate at `t = 0`.
    pub fn aux_variance(&self) -> f64 {
        self.beta * self.inv_mass
    }

    /// Lower time cutoff `10⁻³ T` used wherever `ℓ_t⁻¹` is needed.
    pub fn t_min(&self) -> f64 {
        1e-3 * self.horizon
    }
}

/// Couplings `γᵢ` making `F` critically damped with eigenvalue `−ξ/n`.
///
/// The target characteristic polynomial `(λ + ξ/n)ⁿ` is expanded as a Cauer
/// continued fraction `P_even/P_odd = c₁λ + 1/(c₂λ + 1/(c₃λ + …))`; for this
/// tridiagonal drift `c₁ = 1/ξ` and `γ_{n−k}² = 1/(c_k c_{k+1})`.
pub fn critical_gammas(order: usize, xi: f64) -> Result<Vec<f64>> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidParameter(format!("xi must be positive, got {xi}")));
    }
    if order <= 1 {
        return Ok(Vec::new());
    }
    let n = order;
    let a = xi / n as f64;
    // Descending coefficients of (λ + a)^n.
    let mut target = vec![0.0; n + 1];
    for (k, c) in target.iter_mut().enumerate() {
        *c = binomial(n, k) * math::powf(a, k as f64);
    }
    // Split by parity of the power of λ.
    let mut num: Vec<f64> = target.iter().step_by(2).copied().collect();
    let mut den: Vec<f64> = target.iter().skip(1).step_by(2).copied().collect();
    let mut cauer = Vec::with_capacity(n);
    for _ in 0..n {
        let c = num[0] / den[0];
        cauer.push(c);
        // num − c λ den: the leading terms cancel, leaving one fewer term.
        let mut rem: Vec<f64> = num[1..].to_vec();
        for (r, d) in rem.iter_mut().zip(&den[1..]) {
            *r -= c * d;
        }
        num = den;
        den = rem;
        if den.is_empty() {
            break;
        }
    }
    if cauer.len() != n || cauer.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "critical damping expansion failed for order {n}"
        )));
    }
    let mut gammas = vec![0.0; n - 1];
    for k in 1..n {
        gammas[n - 1 - k] = math::sqrt(1.0 / (cauer[k - 1] * cauer[k]));
    }
    Ok(gammas)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Drift factor `F = Σ γᵢ (E_{i,i+1} − E_{i+1,i}) − ξ E_{n,n}`.
pub fn build_drift(params: &HoldParams) -> Result<BlockMatrix> {
    params.validate()?;
    let n = params.order;
    let mut f = BlockMatrix::zeros(n);
    for (i, &g) in params.gammas.iter().enumerate() {
        f[(i, i + 1)] = g;
        f[(i + 1, i)] = -g;
    }
    f[(n - 1, n - 1)] = -params.xi;
    Ok(f)
}

/// Diffusion factor `G = √(2 ξ L⁻¹) E_{n,n}`.
pub fn build_diffusion(params: &HoldParams) -> Result<BlockMatrix> {
    params.validate()?;
    let n = params.order;
    let mut g = BlockMatrix::zeros(n);
    g[(n - 1, n - 1)] = math::sqrt(2.0 * params.xi * params.inv_mass);
    Ok(g)
}

/// `S₀ = diag(ε_num, β L⁻¹, …, β L⁻¹)`.
pub fn initial_cov(params: &HoldParams) -> Result<BlockMatrix> {
    params.validate()?;
    let mut diag = vec![params.aux_variance(); params.order];
    diag[0] = params.eps_num;
    Ok(BlockMatrix::diagonal(&diag))
}

/// The state-independent part of the transition at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardKernel {
    pub time: f64,
    /// `exp(F t)`
    pub transition: BlockMatrix,
    /// `S_t`
    pub cov: BlockMatrix,
    /// Lower Cholesky factor `ℓ_t` of `S_t`.
    pub chol: BlockMatrix,
}

impl ForwardKernel {
    pub fn new(params: &HoldParams, t: f64) -> Result<Self> {
        Self::with_initial_cov(params, &initial_cov(params)?, t)
    }

    /// Same as [`ForwardKernel::new`] with an arbitrary initial covariance factor.
    pub fn with_initial_cov(params: &HoldParams, s0: &BlockMatrix, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("time must be finite and >= 0, got {t}")));
        }
        let f = build_drift(params)?;
        let e = f.exp(t)?;
        let n = params.order;
        let stationary = BlockMatrix::identity(n).scale(params.inv_mass);
        let cov = stationary.add(&e.matmul(&s0.sub(&stationary)).matmul(&e.transpose()));
        // Symmetrize away round-off before factoring.
        let cov = cov.add(&cov.transpose()).scale(0.5);
        let chol = match cov.cholesky() {
            Ok(l) => l,
            Err(_) => {
                let jittered = cov.add(&BlockMatrix::identity(n).scale(CHOLESKY_JITTER));
                jittered.cholesky().map_err(|_| Error::NotPositiveDefinite {
                    time: t,
                    min_eigenvalue: cov.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min),
                })?
            }
        };
        Ok(Self {
            time: t,
            transition: e,
            cov,
            chol,
        })
    }

    /// `ℓ_t[n, n]`, the scale linking `ε_n` to the last-block score.
    pub fn last_diag(&self) -> f64 {
        let n = self.chol.order();
        self.chol[(n - 1, n - 1)]
    }

    /// `μ_t + (ℓ_t ⊗ I_d) noise`
    pub fn sample(&self, x0: &State, noise: &[f64]) -> Result<State> {
        if noise.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                got: noise.len(),
            });
        }
        let mut out = self.transition.apply(x0);
        let mut scratch = vec![0.0; noise.len()];
        self.chol.apply_flat(noise, &mut scratch);
        for (o, s) in out.as_mut_slice().iter_mut().zip(scratch) {
            *o += s;
        }
        Ok(out)
    }
}

/// Mean and covariance of `x_t` given `x₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: State,
    pub cov: BlockMatrix,
    pub chol: BlockMatrix,
    pub time: f64,
}

fn check_state(params: &HoldParams, x: &State) -> Result<()> {
    if x.order() != params.order || x.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.state_len(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn forward_moments(params: &HoldParams, x0: &State, t: f64) -> Result<GaussianMoments> {
    check_state(params, x0)?;
    let kernel = ForwardKernel::new(params, t)?;
    Ok(GaussianMoments {
        mean: kernel.transition.apply(x0),
        cov: kernel.cov,
        chol: kernel.chol,
        time: t,
    })
}

/// Exact draw `x_t = μ_t + (ℓ_t ⊗ I_d) noise`.
pub fn sample_forward(params: &HoldParams, x0: &State, t: f64, noise: &[f64]) -> Result<State> {
    check_state(params, x0)?;
    ForwardKernel::new(params, t)?.sample(x0, noise)
}

/// Last block of `−Σ_t⁻¹ (x_t − μ_t)`, which reduces to `−ε_n / ℓ_t[n, n]`.
pub fn conditional_score_last_block(moments: &GaussianMoments, noise_last: &[f64]) -> Result<Vec<f64>> {
    let n = moments.chol.order();
    let scale = moments.chol[(n - 1, n - 1)];
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonFinite("conditional_score_last_block"));
    }
    Ok(noise_last.iter().map(|e| -e / scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    /// `(re, im)` pairs sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    /// All eigenvalues real, negative and equal (relative tolerance 1e-6).
    pub critically_damped: bool,
}

/// Reports the spectrum of `F` and whether it is critically damped.
///
/// The flag is decided on the characteristic polynomial: the spectrum is a
/// single real `−a` exactly when the polynomial is `(λ + a)ⁿ`. Comparing
/// coefficients avoids the `ε^{1/n}` splitting that a repeated defective
/// eigenvalue suffers under numerical root finding.
pub fn critical_damping_diagnostic(f: &BlockMatrix) -> DampingReport {
    const TOL: f64 = 1e-6;
    let n = f.order();
    let coeffs = f.characteristic_polynomial();
    let a = coeffs.get(1).copied().unwrap_or(0.0) / n.max(1) as f64;
    let critically_damped = n > 0
        && a > 0.0
        && (1..=n).all(|k| {
            let expected = binomial(n, k) * math::powf(a, k as f64);
            (coeffs[k] - expected).abs() <= TOL * expected
        });
    DampingReport {
        eigenvalues: f.eigenvalues(),
        critically_damped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(order: usize, gammas: Vec<f64>, xi: f64) -> HoldParams {
        HoldParams {
            order,
            dim: 2,
            gammas,
            xi,
            inv_mass: 1.0,
            beta: 1.0,
            eps_num: 1e-3,
            horizon: 1.0,
        }
    }

    #[test]
    fn drift_examples() {
        assert_eq!(build_drift(&params(1, vec![], 2.0)).unwrap(), BlockMatrix::from_rows(&[[-2.0]]));
        assert_eq!(
            build_drift(&params(2, vec![1.0], 2.0)).unwrap(),
            BlockMatrix::from_rows(&[[0.0, 1.0], [-1.0, -2.0]])
        );
        assert_eq!(
            build_drift(&params(3, vec![1.0, 2.0], 3.0)).unwrap(),
            BlockMatrix::from_rows(&[[0.0, 1.0, 0.0], [-1.0, 0.0, 2.0], [0.0, -2.0, -3.0]])
        );
    }

    #[test]
    fn diffusion_examples() {
        assert_eq!(build_diffusion(&params(1, vec![], 2.0)).unwrap(), BlockMatrix::from_rows(&[[2.0]]));
        assert_eq!(
            build_diffusion(&params(2, vec![1.0], 2.0)).unwrap(),
            BlockMatrix::from_rows(&[[0.0, 0.0], [0.0, 2.0]])
        );
        let mut p = params(2, vec![1.0], 8.0);
        p.inv_mass = 0.25;
        assert_eq!(build_diffusion(&p).unwrap(), BlockMatrix::from_rows(&[[0.0, 0.0], [0.0, 2.0]]));
    }

    #[test]
    fn initial_cov_examples() {
        assert_eq!(initial_cov(&params(1, vec![], 2.0)).unwrap(), BlockMatrix::diagonal(&[1e-3]));
        let mut p = params(2, vec![1.0], 2.0);
        p.beta = 10.0;
        assert_eq!(initial_cov(&p).unwrap(), BlockMatrix::diagonal(&[1e-3, 10.0]));
        let mut p = params(3, vec![1.0, 1.0], 2.0);
        p.beta = 2.0;
        p.inv_mass = 0.5;
        assert_eq!(initial_cov(&p).unwrap(), BlockMatrix::diagonal(&[1e-3, 1.0, 1.0]));
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(params(2, vec![], 2.0).validate().is_err());
        assert!(params(2, vec![-1.0], 2.0).validate().is_err());
        assert!(params(1, vec![], 0.0).validate().is_err());
        let mut p = params(1, vec![], 1.0);
        p.eps_num = 0.0;
        assert!(p.validate().is_err());
        p.eps_num = 1e-3;
        p.dim = 0;
        assert!(p.validate().is_err());
        p.dim = 1;
        p.order = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn moments_at_zero() {
        let p = params(3, vec![1.0, 2.0], 3.0);
        let x0 = State::from_vec(3, 2, vec![0.3, -0.2, 1.0, 2.0, -1.0, 0.5]).unwrap();
        let m = forward_moments(&p, &x0, 0.0).unwrap();
        assert_eq!(m.mean, x0);
        assert!(m.cov.sub(&initial_cov(&p).unwrap()).max_abs() < 1e-15);
    }

    #[test]
    fn moments_converge_to_stationary() {
        let p = HoldParams::critically_damped(3, 2, 6.0, 1.5, 5.0, 1e-3, 1.0).unwrap();
        let x0 = State::from_data(3, &[1.0, -1.0]);
        let m = forward_moments(&p, &x0, 60.0).unwrap();
        assert!(m.cov.sub(&BlockMatrix::identity(3).scale(1.5)).max_abs() < 1e-10);
        assert!(m.mean.as_slice().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn scalar_ou_variance() {
        let mut p = params(1, vec![], 2.0);
        p.eps_num = 0.01;
        let m = forward_moments(&p, &State::zeros(1, 2), 0.5).unwrap();
        let expected = 1.0 + (-2.0f64).exp() * (0.01 - 1.0);
        assert_relative_eq!(m.cov[(0, 0)], expected, max_relative = 1e-12);
        assert_relative_eq!(m.cov[(0, 0)], 0.86602, epsilon = 1e-5);
    }

    #[test]
    fn sample_examples() {
        let p = params(2, vec![1.0], 2.0);
        let x0 = State::from_vec(2, 2, vec![0.5, 0.25, 0.0, 0.0]).unwrap();
        let m = forward_moments(&p, &x0, 0.3).unwrap();
        assert_eq!(sample_forward(&p, &x0, 0.3, &[0.0; 4]).unwrap(), m.mean);
        let x = sample_forward(&p, &x0, 0.0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(x.as_slice()[0], 0.5 + 1e-3f64.sqrt(), max_relative = 1e-14);
        assert_eq!(&x.as_slice()[1..], &[0.25, 0.0, 0.0]);
        assert!(sample_forward(&p, &x0, 0.3, &[0.0; 3]).is_err());
    }

    #[test]
    fn score_examples() {
        let m = GaussianMoments {
            mean: State::zeros(2, 2),
            cov: BlockMatrix::diagonal(&[1.0, 4.0]),
            chol: BlockMatrix::diagonal(&[1.0, 2.0]),
            time: 0.0,
        };
        assert_eq!(conditional_score_last_block(&m, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(conditional_score_last_block(&m, &[1.0, -1.0]).unwrap(), vec![-0.5, 0.5]);
        let bad = GaussianMoments {
            chol: BlockMatrix::diagonal(&[1.0, 0.0]),
            ..m
        };
        assert!(conditional_score_last_block(&bad, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn damping_examples() {
        let r = critical_damping_diagnostic(&BlockMatrix::from_rows(&[[-2.0]]));
        assert!(r.critically_damped);
        assert_relative_eq!(r.eigenvalues[0].0, -2.0);

        let r = critical_damping_diagnostic(&build_drift(&params(2, vec![1.0], 2.0)).unwrap());
        assert!(r.critically_damped);
        for (re, im) in &r.eigenvalues {
            assert!((re + 1.0).abs() < 1e-6 && im.abs() < 1e-6);
        }

        let r = critical_damping_diagnostic(&build_drift(&params(2, vec![1.0], 5.0)).unwrap());
        assert!(!r.critically_damped);
        // λ² + 5λ + 1 = 0
        let disc = 21.0f64.sqrt();
        assert_relative_eq!(r.eigenvalues[0].0, (-5.0 - disc) / 2.0, max_relative = 1e-10);
        assert_relative_eq!(r.eigenvalues[1].0, (-5.0 + disc) / 2.0, max_relative = 1e-10);
        assert!(r.eigenvalues.iter().all(|e| e.1 == 0.0 || e.1.abs() < 1e-12));
    }

    #[test]
    fn critical_gammas_closed_forms() {
        assert!(critical_gammas(1, 3.0).unwrap().is_empty());
        let g2 = critical_gammas(2, 4.0).unwrap();
        assert_relative_eq!(g2[0], 2.0, max_relative = 1e-14);
        // n = 3, a = ξ/3: γ₁² = a²/3, γ₂² = 8a²/3
        let g3 = critical_gammas(3, 6.0).unwrap();
        assert_relative_eq!(g3[0] * g3[0], 4.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(g3[1] * g3[1], 32.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn critical_gammas_are_critical() {
        for n in 1..=6 {
            let p = HoldParams::critically_damped(n, 1, 2.5 * n as f64, 1.0, 1.0, 1e-3, 1.0).unwrap();
            let f = build_drift(&p).unwrap();
            let report = critical_damping_diagnostic(&f);
            assert!(report.critically_damped, "order {n}: {report:?}");
            let coeffs = f.characteristic_polynomial();
            for k in 0..=n {
                assert_relative_eq!(coeffs[k], binomial(n, k) * 2.5f64.powi(k as i32), max_relative = 1e-9);
            }
        }
    }
}
