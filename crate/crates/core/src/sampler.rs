//! Reverse-time generation from the stationary prior `N(0, L⁻¹ I)`.
//!
//! Since `G Gᵀ = 2 ξ L⁻¹ E_{n,n}`, only the last-block score enters the
//! reverse dynamics:
//! - probability flow: `dx = (F x − ξ L⁻¹ S_θ) dt`
//! - reverse SDE: `dx = (F x − 2 ξ L⁻¹ S_θ) dt + G dw̄`
//!
//! where `S_θ = (0, …, 0, s_θ)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{BlockMatrix, State};
use crate::math;
use crate::network::ScoreFn;
use crate::process::{build_drift, HoldParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ProbabilityFlow,
    ReverseSde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub steps: usize,
    pub scheme: Scheme,
    /// Early-stop time near 0.
    pub t_end: f64,
}

impl IntegratorConfig {
    pub fn for_horizon(horizon: f64) -> Self {
        Self {
            steps: 500,
            scheme: Scheme::ProbabilityFlow,
            t_end: 1e-3 * horizon,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        if !(self.t_end >= 0.0 && self.t_end < horizon) {
            return Err(Error::InvalidParameter(format!(
                "t_end must lie in [0, T), got {} with T={horizon}",
                self.t_end
            )));
        }
        Ok(())
    }
}

/// I.i.d. draws from `N(0, L⁻¹ I_{nd})`.
pub fn sample_prior<R: Rng + ?Sized>(params: &HoldParams, rng: &mut R, count: usize) -> Result<Vec<State>> {
    params.validate()?;
    if count == 0 {
        return Err(Error::InvalidParameter("count must be >= 1".into()));
    }
    let std = math::sqrt(params.inv_mass);
    Ok((0..count)
        .map(|_| {
            let v = (0..params.state_len())
                .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect::<Vec<f64>>();
            State::from_vec(params.order, params.dim, v).expect("length matches")
        })
        .collect())
}

/// Reverse-time stepper with the drift matrix cached.
#[derive(Debug, Clone)]
pub struct ReverseStepper<'a, S: ?Sized> {
    params: &'a HoldParams,
    score: &'a S,
    drift: BlockMatrix,
}

impl<'a, S: ScoreFn + ?Sized> ReverseStepper<'a, S> {
    pub fn new(params: &'a HoldParams, score: &'a S) -> Result<Self> {
        Ok(Self {
            params,
            score,
            drift: build_drift(params)?,
        })
    }

    /// `F x − c ξ L⁻¹ S_θ(x, t)`, the reverse drift with score weight `c`.
    fn drift(&self, x: &State, t: f64, score_weight: f64) -> Result<State> {
        let mut out = self.drift.apply(x);
        let s = self.score.last_block_score(x.as_slice(), t)?;
        if s.len() != self.params.dim {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim,
                got: s.len(),
            });
        }
        let k = score_weight * self.params.xi * self.params.inv_mass;
        let last = self.params.order - 1;
        for (o, v) in out.block_mut(last).iter_mut().zip(&s) {
            *o -= k * v;
        }
        Ok(out)
    }

    /// Explicit Euler step of the probability-flow ODE; `dt < 0` runs backwards.
    pub fn probability_flow_step(&self, x: &State, t: f64, dt: f64) -> Result<State> {
        if dt == 0.0 {
            return Ok(x.clone());
        }
        let drift = self.drift(x, t, 1.0)?;
        let mut next = x.clone();
        next.axpy(dt, &drift);
        if !next.is_finite() {
            return Err(Error::NonFinite("probability_flow_step"));
        }
        Ok(next)
    }

    /// Euler–Maruyama step of the reverse SDE; noise enters the last block only.
    pub fn reverse_sde_step<R: Rng + ?Sized>(&self, x: &State, t: f64, dt: f64, rng: &mut R) -> Result<State> {
        let drift = self.drift(x, t, 2.0)?;
        let mut next = x.clone();
        next.axpy(dt, &drift);
        let noise_std = math::sqrt(2.0 * self.params.xi * self.params.inv_mass * dt.abs());
        let last = self.params.order - 1;
        for v in next.block_mut(last) {
            let z: f64 = StandardNormal.sample(rng);
            *v += noise_std * z;
        }
        if !next.is_finite() {
            return Err(Error::NonFinite("reverse_sde_step"));
        }
        Ok(next)
    }

    /// Integrates one path from `T` down to `t_end` on a uniform grid.
    pub fn integrate<R: Rng + ?Sized>(&self, mut x: State, cfg: &IntegratorConfig, rng: &mut R) -> Result<State> {
        let horizon = self.params.horizon;
        let dt = -(horizon - cfg.t_end) / cfg.steps as f64;
        for k in 0..cfg.steps {
            let t = horizon + k as f64 * dt;
            x = match cfg.scheme {
                Scheme::ProbabilityFlow => self.probability_flow_step(&x, t, dt)?,
                Scheme::ReverseSde => self.reverse_sde_step(&x, t, dt, rng)?,
            };
        }
        Ok(x)
    }
}

pub fn probability_flow_step<S: ScoreFn + ?Sized>(
    params: &HoldParams,
    score: &S,
    x: &State,
    t: f64,
    dt: f64,
) -> Result<State> {
    ReverseStepper::new(params, score)?.probability_flow_step(x, t, dt)
}

pub fn reverse_sde_step<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    params: &HoldParams,
    score: &S,
    x: &State,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<State> {
    ReverseStepper::new(params, score)?.reverse_sde_step(x, t, dt, rng)
}

/// Integrates `count` prior draws back to `t_end` and returns their data
/// blocks. All paths advance together so the score is evaluated once per
/// step on the whole batch.
pub fn generate<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    params: &HoldParams,
    score: &S,
    cfg: &IntegratorConfig,
    rng: &mut R,
    count: usize,
) -> Result<crate::data::Dataset> {
    cfg.validate(params.horizon)?;
    let drift = build_drift(params)?;
    let prior = sample_prior(params, rng, count)?;
    let (n, d) = (params.order, params.dim);
    let len = params.state_len();
    let mut xs: Vec<f64> = prior.iter().flat_map(|x| x.as_slice().iter().copied()).collect();
    let mut fx = alloc::vec![0.0; len];
    let (weight, noisy) = match cfg.scheme {
        Scheme::ProbabilityFlow => (1.0, false),
        Scheme::ReverseSde => (2.0, true),
    };
    let k = weight * params.xi * params.inv_mass;
    let dt = -(params.horizon - cfg.t_end) / cfg.steps as f64;
    let noise_std = math::sqrt(2.0 * params.xi * params.inv_mass * dt.abs());
    for step in 0..cfg.steps {
        let t = params.horizon + step as f64 * dt;
        let s = score.last_block_scores(&xs, len, t)?;
        if s.len() != count * d {
            return Err(Error::DimensionMismatch {
                expected: count * d,
                got: s.len(),
            });
        }
        for (x, s) in xs.chunks_exact_mut(len).zip(s.chunks_exact(d)) {
            drift.apply_flat(x, &mut fx);
            for (f, v) in fx[(n - 1) * d..].iter_mut().zip(s) {
                *f -= k * v;
            }
            for (xv, f) in x.iter_mut().zip(&fx) {
                *xv += dt * f;
            }
            if noisy {
                for v in &mut x[(n - 1) * d..] {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += noise_std * z;
                }
            }
        }
        if !xs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("generate"));
        }
    }
    let values = xs.chunks_exact(len).flat_map(|x| x[..d].iter().copied()).collect();
    crate::data::Dataset::new(d, values)
}
