//! Rényi-DP accounting for the forward mechanism `x ↦ exp(Ft) x + η_t`,
//! `η_t ~ N(0, Σ_t)`.
//!
//! With the effective correlation `R_t = (exp(Ft)ᵀ Σ_t⁻¹ exp(Ft))⁻¹`, the
//! mechanism is `(α, α Δf_t / 2)`-RDP where `Δf_t` is the largest Mahalanobis
//! norm `vᵀ R_t⁻¹ v` over adjacent differences `v`. Adjacent inputs differ in
//! the data block only, so `Δf_t = Δ₂f · (R_t⁻¹)[1, 1]`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::BlockMatrix;
use crate::process::{build_drift, initial_cov, HoldParams};
use crate::{Error, Result};

/// `R_t = L⁻¹ (exp(Ft)ᵀ exp(Ft))⁻¹ + S₀ − L⁻¹ I`.
///
/// The inverse is taken as `exp(−Ft) exp(−Ft)ᵀ`, which stays accurate when
/// `exp(Ft)` itself is nearly singular.
pub fn effective_correlation(params: &HoldParams, t: f64) -> Result<BlockMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be finite and >= 0, got {t}")));
    }
    let f = build_drift(params)?;
    let inv = f.exp(-t)?;
    let n = params.order;
    let s0 = initial_cov(params)?;
    let growth = inv.matmul(&inv.transpose()).sub(&BlockMatrix::identity(n));
    let r = s0.add(&growth.scale(params.inv_mass));
    if !r.is_finite() {
        return Err(Error::Singular);
    }
    Ok(r.add(&r.transpose()).scale(0.5))
}

/// `(R_t⁻¹)[1, 1]`: the data-block entry of the inverse effective correlation.
pub fn data_block_precision(params: &HoldParams, t: f64) -> Result<f64> {
    let r = effective_correlation(params, t)?;
    let inv = r.inverse()?;
    Ok(inv[(0, 0)])
}

/// `Δf_t = Δ₂f · (R_t⁻¹)[1, 1]`.
pub fn sensitivity(params: &HoldParams, t: f64, data_diameter_sq: f64) -> Result<f64> {
    if !(data_diameter_sq >= 0.0 && data_diameter_sq.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "squared data diameter must be >= 0, got {data_diameter_sq}"
        )));
    }
    if data_diameter_sq == 0.0 {
        return Ok(0.0);
    }
    Ok(data_diameter_sq * data_block_precision(params, t)?)
}

/// `Δf_t` maximized over the pairs of a concrete dataset.
pub fn dataset_sensitivity(params: &HoldParams, t: f64, data: &Dataset) -> Result<f64> {
    if data.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: data.dim(),
        });
    }
    sensitivity(params, t, data.diameter_sq())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("Renyi order must exceed 1, got {alpha}")));
    }
    Ok(())
}

/// `α Δf_t / 2`.
pub fn rdp_epsilon(params: &HoldParams, t: f64, data_diameter_sq: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * sensitivity(params, t, data_diameter_sq)? / 2.0)
}

/// `D_α(N(0, Σ) ‖ N(v, Σ)) = (α/2) vᵀ Σ⁻¹ v` with `Σ = cov ⊗ I_d`.
pub fn gaussian_renyi_divergence(mean_shift: &[f64], cov: &BlockMatrix, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = cov.order();
    if n == 0 || mean_shift.len() % n != 0 {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mean_shift.len(),
        });
    }
    let chol = cov.cholesky()?;
    let d = mean_shift.len() / n;
    // Solve ℓ w = v block-wise; vᵀ Σ⁻¹ v = ‖w‖².
    let mut w: Vec<f64> = mean_shift.to_vec();
    for i in 0..n {
        for k in 0..d {
            let mut s = w[i * d + k];
            for j in 0..i {
                s -= chol[(i, j)] * w[j * d + k];
            }
            w[i * d + k] = s / chol[(i, i)];
        }
    }
    Ok(alpha / 2.0 * w.iter().map(|x| x * x).sum::<f64>())
}

/// `β L⁻¹ (n − 1)`: expected squared error per data dimension of guessing
/// zero for the auxiliary blocks at `t = 0`.
pub fn aux_guess_mse(params: &HoldParams) -> Result<f64> {
    params.validate()?;
    Ok(params.aux_variance() * (params.order - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub t_grid: Vec<f64>,
    pub delta_f: Vec<f64>,
    pub alpha: f64,
    pub data_diameter_sq: f64,
    /// `α Δf₀ / 2`
    pub epsilon_bound: f64,
    /// `α Δ₂f / (2 ε_num)`
    pub epsilon_approx: f64,
    /// Per data dimension.
    pub aux_mse: f64,
}

/// Evaluates `Δf_t` on `points` equally spaced times in `[0, T]`.
pub fn privacy_report(params: &HoldParams, points: usize, data_diameter_sq: f64, alpha: f64) -> Result<PrivacyReport> {
    check_alpha(alpha)?;
    if points < 2 {
        return Err(Error::InvalidParameter("privacy grid needs at least 2 points".into()));
    }
    let t_grid: Vec<f64> = (0..points)
        .map(|k| params.horizon * k as f64 / (points - 1) as f64)
        .collect();
    let delta_f = t_grid
        .iter()
        .map(|&t| sensitivity(params, t, data_diameter_sq))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PrivacyReport {
        epsilon_bound: alpha * delta_f[0] / 2.0,
        epsilon_approx: alpha * data_diameter_sq / (2.0 * params.eps_num),
        aux_mse: aux_guess_mse(params)?,
        t_grid,
        delta_f,
        alpha,
        data_diameter_sq,
    })
}
