//! Denoising score matching on the last block, in ε-prediction form.
//!
//! For `x_t = μ_t + (ℓ_t ⊗ I_d) ε` the conditional last-block score is
//! `−ε_n / ℓ_t[n, n]`, so the per-sample loss `‖ℓ_t[n, n] s_θ(x_t, t) + ε_n‖²`
//! vanishes exactly at the conditional score. The network is trained as a
//! noise predictor, `s_θ = −net / ℓ_t[n, n]` (see [`crate::model`]), so the
//! loss reads `‖ε_n − net(x_t, t)‖²`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::State;
use crate::model::ScoreModel;
use crate::network::{BatchWorkspace, ScoreNetwork};
use crate::optim::{Adam, AdamConfig};
use crate::process::{initial_cov, ForwardKernel, HoldParams};
use crate::{BlockMatrix, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
}

impl TrainConfig {
    /// Defaults for a process with horizon `T`: `t ~ U(10⁻³T, T)`.
    pub fn for_horizon(horizon: f64) -> Self {
        Self {
            epochs: 5000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            t_min: 1e-3 * horizon,
            t_max: horizon,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max <= horizon) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < t_min < t_max <= T, got t_min={} t_max={} T={horizon}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }
}

/// One draw of the training perturbation for a data point.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmSample {
    pub t: f64,
    pub x_t: State,
    /// Full standard-normal draw `ε ∈ ℝ^{nd}`.
    pub noise: Vec<f64>,
    /// `ℓ_t[n, n]`
    pub last_diag: f64,
}

impl DsmSample {
    pub fn noise_last(&self) -> &[f64] {
        let d = self.x_t.dim();
        &self.noise[self.noise.len() - d..]
    }

    /// `‖ℓ_t[n, n] · score + ε_n‖²`
    pub fn loss(&self, score: &[f64]) -> f64 {
        score
            .iter()
            .zip(self.noise_last())
            .map(|(s, e)| {
                let r = self.last_diag * s + e;
                r * r
            })
            .sum()
    }
}

/// Draws `t ~ U(t_min, t_max)` and `ε ~ N(0, I)`, then
/// `x_t = exp(Ft)(q₀, 0, …, 0) + (ℓ_t ⊗ I_d) ε`.
///
/// The auxiliary blocks start at mean zero with variance `β L⁻¹` through
/// `S₀`, so their randomness is carried by `ε`.
pub fn draw_sample<R: Rng + ?Sized>(
    params: &HoldParams,
    s0: &BlockMatrix,
    q0: &[f64],
    t_min: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<DsmSample> {
    let t = t_min + (t_max - t_min) * rng.random::<f64>();
    let kernel = ForwardKernel::with_initial_cov(params, s0, t)?;
    let noise: Vec<f64> = (0..params.state_len()).map(|_| StandardNormal.sample(rng)).collect();
    let x0 = State::from_data(params.order, q0);
    let x_t = kernel.sample(&x0, &noise)?;
    Ok(DsmSample {
        t,
        x_t,
        noise,
        last_diag: kernel.last_diag(),
    })
}

#[derive(Debug, Default)]
struct TrainWorkspace {
    xs: Vec<f64>,
    ts: Vec<f64>,
    noise: Vec<f64>,
    upstream: Vec<f64>,
    net: BatchWorkspace,
}

/// Mean batch loss and its exact parameter gradient.
pub fn dsm_loss<R: Rng + ?Sized>(
    net: &ScoreNetwork,
    params: &HoldParams,
    batch: &Dataset,
    t_min: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("dsm_loss batch"));
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut ws = TrainWorkspace::default();
    let s0 = initial_cov(params)?;
    let loss = accumulate_batch(net, params, &s0, batch, &indices, t_min, t_max, rng, &mut ws, &mut grad)?;
    Ok((loss, grad))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_batch<R: Rng + ?Sized>(
    net: &ScoreNetwork,
    params: &HoldParams,
    s0: &BlockMatrix,
    data: &Dataset,
    indices: &[usize],
    t_min: f64,
    t_max: f64,
    rng: &mut R,
    ws: &mut TrainWorkspace,
    grad: &mut [f64],
) -> Result<f64> {
    if data.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: data.dim(),
        });
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let d = params.dim;
    let rows = indices.len();
    let scale = 1.0 / rows as f64;
    ws.xs.clear();
    ws.ts.clear();
    ws.noise.clear();
    for &i in indices {
        let sample = draw_sample(params, s0, data.point(i), t_min, t_max, rng)?;
        ws.xs.extend_from_slice(sample.x_t.as_slice());
        ws.ts.push(sample.t);
        ws.noise.extend_from_slice(sample.noise_last());
    }
    let out = net.forward_batch(&ws.xs, &ws.ts, &mut ws.net)?;
    let mut total = 0.0;
    ws.upstream.clear();
    for (o, e) in out.iter().zip(&ws.noise) {
        let r = o - e;
        total += r * r;
        ws.upstream.push(2.0 * scale * r);
    }
    debug_assert_eq!(ws.upstream.len(), rows * d);
    net.backward_batch(&mut ws.net, &ws.upstream, grad);
    Ok(total * scale)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoreModel,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch Adam on the DSM loss. Bit-reproducible for a fixed seed.
pub fn train(net: ScoreNetwork, params: &HoldParams, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(net, params, data, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_with_callback(
    mut net: ScoreNetwork,
    params: &HoldParams,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    params.validate()?;
    cfg.validate(params.horizon)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("training data"));
    }
    let arch = net.architecture();
    if arch.order != params.order || arch.dim != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.state_len(),
            got: arch.order * arch.dim,
        });
    }
    let s0 = initial_cov(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        net.num_params(),
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut ws = TrainWorkspace::default();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = accumulate_batch(&net, params, &s0, data, chunk, cfg.t_min, cfg.t_max, &mut rng, &mut ws, &mut grad)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch },
                    other => other,
                })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            opt.step(net.params_mut(), &grad);
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        trace.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        model: ScoreModel::new(net, params.clone())?,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn params(order: usize) -> HoldParams {
        HoldParams::critically_damped(order, 2, 4.0 * order as f64, 1.0, 2.0, 1e-3, 1.0).unwrap()
    }

    #[test]
    fn oracle_score_has_zero_loss() {
        let p = params(3);
        let s0 = initial_cov(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = draw_sample(&p, &s0, &[0.3, -0.4], 1e-3, 1.0, &mut rng).unwrap();
            let oracle: Vec<f64> = s.noise_last().iter().map(|e| -e / s.last_diag).collect();
            assert!(s.loss(&oracle) < 1e-24);
        }
    }

    #[test]
    fn zero_score_loss_is_dim_on_average() {
        let p = params(2);
        let arch = Architecture {
            order: 2,
            dim: 2,
            depth: 2,
            width: 4,
            horizon: 1.0,
        };
        let mut net = ScoreNetwork::new(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.zero_output_layer();
        let data = Dataset::new(2, vec![0.1; 2 * 4000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (loss, _) = dsm_loss(&net, &p, &data, 1e-3, 1.0, &mut rng).unwrap();
        // E‖ε_n‖² = d = 2; standard error √(2d/N) ≈ 0.032.
        assert!((loss - 2.0).abs() < 4.0 * (4.0f64 / 4000.0).sqrt(), "{loss}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::for_horizon(1.0);
        assert!(cfg.validate(1.0).is_ok());
        cfg.t_max = 2.0;
        assert!(cfg.validate(1.0).is_err());
        cfg = TrainConfig::for_horizon(1.0);
        cfg.epochs = 0;
        assert!(cfg.validate(1.0).is_err());
        cfg = TrainConfig::for_horizon(1.0);
        cfg.t_min = 0.0;
        assert!(cfg.validate(1.0).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let p = params(1);
        let arch = Architecture {
            order: 1,
            dim: 2,
            depth: 3,
            width: 8,
            horizon: 1.0,
        };
        let net = ScoreNetwork::new(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let data = Dataset::new(2, vec![0.5, -0.5, 0.1, 0.2, 0.0, 0.3]).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::for_horizon(1.0)
        };
        let out = train(net.clone(), &p, &data, &cfg).unwrap();
        assert_eq!(out.model.net().params(), net.params());
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn rejects_mismatched_network() {
        let p = params(2);
        let arch = Architecture {
            order: 1,
            dim: 2,
            depth: 2,
            width: 4,
            horizon: 1.0,
        };
        let net = ScoreNetwork::zeros(arch).unwrap();
        let data = Dataset::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            train(net, &p, &data, &TrainConfig::for_horizon(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
