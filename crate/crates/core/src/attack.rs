//! Proximal-initialization membership inference against HOLD++.
//!
//! For each candidate `q₀` the attacker sets `x₀ = (q₀, 0, …, 0)`, estimates
//! the last noise block as `ε_n = −s_θ(x₀, 0) ℓ₀[n, n]` (other blocks zero),
//! reconstructs `x_t = μ_t + (ℓ_t ⊗ I_d) ε` deterministically on the grid
//! `t_k = (k − 1) T / n_time`, and records the drift residual
//! `R_t = ‖F x_t − ξ L⁻¹ S_θ(x_t, t)‖_p`. Points with small `R̄` are
//! declared members.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{BlockMatrix, State};
use crate::math;
use crate::network::ScoreFn;
use crate::process::{build_drift, initial_cov, ForwardKernel, HoldParams};
use crate::{Error, Result};

/// Order of the norm applied to the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    P(f64),
    Inf,
}

impl Norm {
    pub fn apply(&self, v: &[f64]) -> f64 {
        match *self {
            Norm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Norm::P(p) if p == 2.0 => math::sqrt(v.iter().map(|x| x * x).sum()),
            Norm::P(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
            Norm::P(p) => math::powf(v.iter().map(|x| math::powf(x.abs(), p)).sum(), 1.0 / p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub n_time: usize,
    pub norm: Norm,
    /// Threshold the time-averaged `R̄`; otherwise report the most revealing
    /// single timestep.
    pub use_mean: bool,
    /// Draw `ε₁ … ε_{n−1} ~ N(0, I)` instead of zeros.
    pub stochastic_aux_noise: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n_time: 10,
            norm: Norm::P(2.0),
            use_mean: true,
            stochastic_aux_noise: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_time == 0 {
            return Err(Error::InvalidParameter("n_time must be >= 1".into()));
        }
        if let Norm::P(p) = self.norm {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!("norm order must be positive, got {p}")));
            }
        }
        Ok(())
    }

    /// `t_k = (k − 1) T / n_time` for `k = 1 … n_time`.
    pub fn time_grid(&self, horizon: f64) -> Vec<f64> {
        (0..self.n_time).map(|k| k as f64 * horizon / self.n_time as f64).collect()
    }
}

/// `‖F x_t − ξ L⁻¹ S_θ(x_t, t)‖_p` over all `nd` coordinates.
pub fn attack_metric<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    score: &S,
    x_t: &State,
    t: f64,
    norm: Norm,
) -> Result<f64> {
    let drift = build_drift(params)?;
    metric_with_drift(params, &drift, score, x_t, t, norm)
}

fn metric_with_drift<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    drift: &BlockMatrix,
    score: &S,
    x_t: &State,
    t: f64,
    norm: Norm,
) -> Result<f64> {
    if !x_t.is_finite() {
        return Err(Error::NonFinite("attack_metric state"));
    }
    let mut v = drift.apply(x_t);
    let s = score.last_block_score(x_t.as_slice(), t)?;
    if s.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: s.len(),
        });
    }
    let k = params.xi * params.inv_mass;
    for (o, sv) in v.block_mut(params.order - 1).iter_mut().zip(&s) {
        *o -= k * sv;
    }
    let r = norm.apply(v.as_slice());
    if !r.is_finite() {
        return Err(Error::NonFinite("attack_metric"));
    }
    Ok(r)
}

/// The attacker's deterministic reconstruction of the forward trajectory of `q₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEstimate {
    pub x0: State,
    /// `ε_full = (0, …, 0, ε_n)` (or with random leading blocks in the stochastic variant).
    pub noise: Vec<f64>,
}

impl ForwardEstimate {
    pub fn at(&self, params: &HoldParams, t: f64) -> Result<State> {
        ForwardKernel::new(params, t)?.sample(&self.x0, &self.noise)
    }
}

pub fn deterministic_forward_estimate<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    score: &S,
    q0: &[f64],
) -> Result<ForwardEstimate> {
    estimate_with(params, score, q0, None)
}

fn estimate_with<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    score: &S,
    q0: &[f64],
    aux_noise: Option<&mut ChaCha8Rng>,
) -> Result<ForwardEstimate> {
    params.validate()?;
    if q0.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: q0.len(),
        });
    }
    let x0 = State::from_data(params.order, q0);
    let s0 = initial_cov(params)?;
    let ell0 = s0.cholesky()?;
    let last = params.order - 1;
    let scale = ell0[(last, last)];
    let s = score.last_block_score(x0.as_slice(), 0.0)?;
    let mut noise = vec![0.0; params.state_len()];
    if let Some(rng) = aux_noise {
        for v in &mut noise[..last * params.dim] {
            *v = StandardNormal.sample(rng);
        }
    }
    for (e, sv) in noise[last * params.dim..].iter_mut().zip(&s) {
        *e = -sv * scale;
    }
    Ok(ForwardEstimate { x0, noise })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub times: Vec<f64>,
    /// `R[i][k]` for point `i` at time `t_k`.
    pub metrics: Vec<Vec<f64>>,
    /// Row means `R̄`.
    pub mean_metric: Vec<f64>,
    /// `true` for members.
    pub labels: Vec<bool>,
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)` for the reported statistic.
    pub roc: Vec<(f64, f64)>,
    pub auroc: f64,
    pub per_time_auroc: Vec<f64>,
}

impl AttackReport {
    /// AUROC using column `k` (1-based) of `R` as the statistic.
    pub fn per_time_auroc(&self, k: usize) -> Result<f64> {
        per_time_auroc(&self.metrics, &self.labels, k)
    }
}

pub fn run_pia<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    score: &S,
    members: &Dataset,
    holdouts: &Dataset,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    params.validate()?;
    if members.is_empty() || holdouts.is_empty() {
        return Err(Error::EmptyDataset("run_pia"));
    }
    for set in [members, holdouts] {
        if set.dim() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                got: set.dim(),
            });
        }
    }
    let times = cfg.time_grid(params.horizon);
    let kernels = times
        .iter()
        .map(|&t| ForwardKernel::new(params, t))
        .collect::<Result<Vec<_>>>()?;
    let drift = build_drift(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut metrics = Vec::with_capacity(members.len() + holdouts.len());
    let mut labels = Vec::with_capacity(metrics.capacity());
    for (set, is_member) in [(members, true), (holdouts, false)] {
        for q0 in set.iter() {
            let est = estimate_with(params, score, q0, cfg.stochastic_aux_noise.then_some(&mut rng))?;
            let row = kernels
                .iter()
                .map(|k| {
                    let x_t = k.sample(&est.x0, &est.noise)?;
                    metric_with_drift(params, &drift, score, &x_t, k.time, cfg.norm)
                })
                .collect::<Result<Vec<f64>>>()?;
            metrics.push(row);
            labels.push(is_member);
        }
    }
    let mean_metric: Vec<f64> = metrics.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let per_time = (1..=cfg.n_time)
        .map(|k| per_time_auroc(&metrics, &labels, k))
        .collect::<Result<Vec<f64>>>()?;
    let statistic: Vec<f64> = if cfg.use_mean {
        mean_metric.clone()
    } else {
        let best = per_time
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        metrics.iter().map(|r| r[best]).collect()
    };
    let (mem, hold) = partition(&statistic, &labels);
    Ok(AttackReport {
        times,
        roc: roc_curve(&mem, &hold),
        auroc: auroc(&mem, &hold),
        metrics,
        mean_metric,
        labels,
        per_time_auroc: per_time,
    })
}

fn partition(stat: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut mem = Vec::new();
    let mut hold = Vec::new();
    for (&s, &l) in stat.iter().zip(labels) {
        if l {
            mem.push(s);
        } else {
            hold.push(s);
        }
    }
    (mem, hold)
}

pub fn per_time_auroc(metrics: &[Vec<f64>], labels: &[bool], k: usize) -> Result<f64> {
    let n_time = metrics.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || k > n_time {
        return Err(Error::IndexOutOfRange { index: k, len: n_time });
    }
    let column: Vec<f64> = metrics.iter().map(|r| r[k - 1]).collect();
    let (mem, hold) = partition(&column, labels);
    if mem.is_empty() || hold.is_empty() {
        return Err(Error::EmptyDataset("per_time_auroc"));
    }
    Ok(auroc(&mem, &hold))
}

/// `P(member < holdout) + ½ P(member = holdout)` via average ranks
/// (Mann–Whitney U of the holdout sample).
pub fn auroc(members: &[f64], holdouts: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(holdouts.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut holdout_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let rank = (i + j + 2) as f64 / 2.0;
        holdout_rank_sum += rank * all[i..=j].iter().filter(|e| !e.1).count() as f64;
        i = j + 1;
    }
    let nh = holdouts.len() as f64;
    let nm = members.len() as f64;
    (holdout_rank_sum - nh * (nh + 1.0) / 2.0) / (nm * nh)
}

/// ROC of the rule "member iff statistic < τ" over all thresholds.
pub fn roc_curve(members: &[f64], holdouts: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(holdouts.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nh) = (members.len() as f64, holdouts.len() as f64);
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        roc.push((fp as f64 / nh, tp as f64 / nm));
        i = j;
    }
    roc
}

/// Trapezoidal area under an ROC polyline.
pub fn trapezoid_area(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}
