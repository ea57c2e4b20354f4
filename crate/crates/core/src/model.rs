//! Score model in noise-prediction form: the network estimates `ε_n` and the
//! last-block score is `s_θ(x, t) = −net(x, t) / ℓ_t[n, n]`.
//!
//! The network output then stays O(1) at every time, while the score itself
//! grows like `1/ℓ_t` near `t = 0`.

use alloc::vec::Vec;

use crate::network::{BatchWorkspace, ScoreFn, ScoreNetwork};
use crate::process::{ForwardKernel, HoldParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    net: ScoreNetwork,
    params: HoldParams,
}

impl ScoreModel {
    pub fn new(net: ScoreNetwork, params: HoldParams) -> Result<Self> {
        params.validate()?;
        let arch = net.architecture();
        if arch.order != params.order || arch.dim != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.state_len(),
                got: arch.order * arch.dim,
            });
        }
        Ok(Self { net, params })
    }

    pub fn net(&self) -> &ScoreNetwork {
        &self.net
    }

    pub fn params(&self) -> &HoldParams {
        &self.params
    }

    pub fn into_net(self) -> ScoreNetwork {
        self.net
    }

    /// `ℓ_t[n, n]`
    pub fn noise_scale(&self, t: f64) -> Result<f64> {
        Ok(ForwardKernel::new(&self.params, t)?.last_diag())
    }

    /// Raw network output, the predicted `ε_n`.
    pub fn predict_noise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.net.forward(x, t)
    }
}

impl ScoreFn for ScoreModel {
    fn last_block_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let scale = self.noise_scale(t)?;
        let mut out = self.net.forward(x, t)?;
        out.iter_mut().for_each(|v| *v = -*v / scale);
        Ok(out)
    }

    fn last_block_scores(&self, xs: &[f64], state_len: usize, t: f64) -> Result<Vec<f64>> {
        let scale = self.noise_scale(t)?;
        let ts = alloc::vec![t; xs.len() / state_len.max(1)];
        let mut ws = BatchWorkspace::default();
        let out = self.net.forward_batch(xs, &ts, &mut ws)?;
        Ok(out.iter().map(|v| -v / scale).collect())
    }
}
