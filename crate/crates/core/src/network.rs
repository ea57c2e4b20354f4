//! Feedforward score network `s_θ(x_t, t) ∈ ℝ^d`.
//!
//! Hidden layers compute `relu(layernorm(W h + b))`; the output layer is
//! affine. Time enters as three appended features `[t/T, sin 2πt/T, cos 2πt/T]`.
//! All parameters live in one flat vector so that the optimizer, gradient
//! checks and the checkpoint codec can treat them uniformly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

pub const TIME_FEATURES: usize = 3;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Anything that can supply the last-block score `s(x_t, t) ∈ ℝ^d`.
pub trait ScoreFn {
    fn last_block_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// Scores of the row-major states in `xs`, each `state_len` long, at one time.
    fn last_block_scores(&self, xs: &[f64], state_len: usize, t: f64) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for x in xs.chunks_exact(state_len) {
            out.extend(self.last_block_score(x, t)?);
        }
        Ok(out)
    }
}

impl<F> ScoreFn for F
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    fn last_block_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self(x, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub order: usize,
    pub dim: usize,
    /// Number of affine layers, output layer included.
    pub depth: usize,
    pub width: usize,
    /// Diffusion end time used to normalize the time features.
    pub horizon: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.dim == 0 || self.depth == 0 || (self.depth > 1 && self.width == 0) {
            return Err(Error::InvalidParameter(format!("invalid architecture {self:?}")));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.order * self.dim + TIME_FEATURES
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth);
        let mut fan_in = self.input_dim();
        for _ in 0..self.depth - 1 {
            shapes.push((fan_in, self.width));
            fan_in = self.width;
        }
        shapes.push((fan_in, self.output_dim()));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().map(|l| l.end).unwrap_or(0)
    }

    pub(crate) fn layout(&self) -> Vec<LayerSlots> {
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut offset = 0;
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let weight = offset;
                let bias = weight + fan_in * fan_out;
                let (gain, shift, end) = if i == last {
                    (None, None, bias + fan_out)
                } else {
                    let g = bias + fan_out;
                    (Some(g), Some(g + fan_out), g + 2 * fan_out)
                };
                offset = end;
                LayerSlots {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                    gain,
                    shift,
                    end,
                }
            })
            .collect()
    }
}

/// Offsets of one layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
    pub gain: Option<usize>,
    pub shift: Option<usize>,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    arch: Architecture,
    layout: Vec<LayerSlots>,
    params: Vec<f64>,
}

/// Activations cached by the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    /// Input to each affine layer.
    inputs: Vec<Vec<f64>>,
    /// Normalized pre-activations `ẑ` per hidden layer.
    normalized: Vec<Vec<f64>>,
    /// `1/√(var + eps)` per hidden layer.
    inv_std: Vec<f64>,
    /// Post-norm, pre-relu values per hidden layer.
    pre_relu: Vec<Vec<f64>>,
    output: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl ScoreNetwork {
    /// He-normal weights, zero biases, unit layer-norm gains.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for slots in net.layout.clone() {
            let std = math::sqrt(2.0 / slots.fan_in as f64);
            for w in &mut net.params[slots.weight..slots.bias] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
            if let Some(g) = slots.gain {
                net.params[g..g + slots.fan_out].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(net)
    }

    /// All parameters zero (layer-norm gains included).
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let params = vec![0.0; arch.num_params()];
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            arch,
            layout: arch.layout(),
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the output layer so that the network outputs 0 everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = *self.layout.last().expect("at least one layer");
        self.params[last.weight..last.end].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Weight matrix (row-major, `fan_out × fan_in`) and bias of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let s = self.layout[i];
        (&self.params[s.weight..s.bias], &self.params[s.bias..s.bias + s.fan_out])
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.layout[i];
        let (w, rest) = self.params[s.weight..].split_at_mut(s.bias - s.weight);
        (w, &mut rest[..s.fan_out])
    }

    /// Layer-norm gain and shift of hidden layer `i`.
    pub fn norm_mut(&mut self, i: usize) -> Option<(&mut [f64], &mut [f64])> {
        let s = self.layout[i];
        let g = s.gain?;
        let (gain, rest) = self.params[g..].split_at_mut(s.fan_out);
        Some((gain, &mut rest[..s.fan_out]))
    }

    /// Network input: the state followed by the time features.
    pub fn encode_input(&self, x: &[f64], t: f64, out: &mut Vec<f64>) {
        let tau = t / self.arch.horizon;
        out.clear();
        out.extend_from_slice(x);
        out.push(tau);
        out.push(math::sin(2.0 * PI * tau));
        out.push(math::cos(2.0 * PI * tau));
    }

    fn check_input(&self, x: &[f64], t: f64) -> Result<()> {
        let expected = self.arch.order * self.arch.dim;
        if x.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: x.len() });
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.forward_cached(x, t, &mut ws)?;
        Ok(ws.output)
    }

    /// Forward pass keeping the activations needed by [`ScoreNetwork::backward`].
    pub fn forward_cached<'w>(&self, x: &[f64], t: f64, ws: &'w mut Workspace) -> Result<&'w [f64]> {
        self.check_input(x, t)?;
        let depth = self.layout.len();
        ws.inputs.resize_with(depth, Vec::new);
        ws.normalized.resize_with(depth - 1, Vec::new);
        ws.pre_relu.resize_with(depth - 1, Vec::new);
        ws.inv_std.resize(depth - 1, 0.0);
        let mut input = core::mem::take(&mut ws.inputs[0]);
        self.encode_input(x, t, &mut input);
        ws.inputs[0] = input;

        for (l, s) in self.layout.iter().enumerate() {
            let w = &self.params[s.weight..s.bias];
            let b = &self.params[s.bias..s.bias + s.fan_out];
            let mut z = if l + 1 < depth {
                core::mem::take(&mut ws.pre_relu[l])
            } else {
                core::mem::take(&mut ws.output)
            };
            affine(w, b, &ws.inputs[l], s.fan_in, &mut z);
            if l + 1 == depth {
                ws.output = z;
                break;
            }
            let (g, h) = (s.gain.unwrap(), s.shift.unwrap());
            let gain = &self.params[g..g + s.fan_out];
            let shift = &self.params[h..h + s.fan_out];
            let m = s.fan_out as f64;
            let mean = z.iter().sum::<f64>() / m;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv_std = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            ws.inv_std[l] = inv_std;
            let normalized = &mut ws.normalized[l];
            normalized.clear();
            normalized.extend(z.iter().map(|v| (v - mean) * inv_std));
            for ((zi, &n), (&gi, &hi)) in z.iter_mut().zip(normalized.iter()).zip(gain.iter().zip(shift)) {
                *zi = gi * n + hi;
            }
            let next = &mut ws.inputs[l + 1];
            next.clear();
            next.extend(z.iter().map(|v| v.max(0.0)));
            ws.pre_relu[l] = z;
        }
        if ws.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(&ws.output)
    }

    /// Accumulates `∂⟨upstream, output⟩/∂θ` into `grad` using the
    /// activations of the most recent [`ScoreNetwork::forward_cached`].
    pub fn backward(&self, ws: &mut Workspace, upstream: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(upstream.len(), self.arch.output_dim());
        let mut delta = core::mem::take(&mut ws.grad_a);
        let mut next = core::mem::take(&mut ws.grad_b);
        delta.clear();
        delta.extend_from_slice(upstream);
        for l in (0..self.layout.len()).rev() {
            let s = self.layout[l];
            if l + 1 < self.layout.len() {
                // delta holds ∂/∂(relu output); push back through relu and layer norm.
                let (g, h) = (s.gain.unwrap(), s.shift.unwrap());
                let normalized = &ws.normalized[l];
                for (dv, &pre) in delta.iter_mut().zip(&ws.pre_relu[l]) {
                    if pre <= 0.0 {
                        *dv = 0.0;
                    }
                }
                let m = s.fan_out as f64;
                let mut mean_dn = 0.0;
                let mut mean_dn_n = 0.0;
                for i in 0..s.fan_out {
                    grad[g + i] += delta[i] * normalized[i];
                    grad[h + i] += delta[i];
                    let dn = delta[i] * self.params[g + i];
                    mean_dn += dn;
                    mean_dn_n += dn * normalized[i];
                    delta[i] = dn;
                }
                mean_dn /= m;
                mean_dn_n /= m;
                let inv_std = ws.inv_std[l];
                for (dv, &n) in delta.iter_mut().zip(normalized) {
                    *dv = inv_std * (*dv - mean_dn - n * mean_dn_n);
                }
            }
            let input = &ws.inputs[l];
            let w = &self.params[s.weight..s.bias];
            for (i, &dz) in delta.iter().enumerate() {
                grad[s.bias + i] += dz;
                if dz == 0.0 {
                    continue;
                }
                let row = &mut grad[s.weight + i * s.fan_in..s.weight + (i + 1) * s.fan_in];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += dz * a;
                }
            }
            if l > 0 {
                next.clear();
                next.resize(s.fan_in, 0.0);
                for (i, &dz) in delta.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    for (nv, &wv) in next.iter_mut().zip(&w[i * s.fan_in..(i + 1) * s.fan_in]) {
                        *nv += dz * wv;
                    }
                }
                core::mem::swap(&mut delta, &mut next);
            }
        }
        ws.grad_a = delta;
        ws.grad_b = next;
    }

    /// Exact gradient of `⟨upstream, s_θ(x, t)⟩` with respect to every parameter.
    pub fn gradient(&self, x: &[f64], t: f64, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.arch.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.output_dim(),
                got: upstream.len(),
            });
        }
        let mut ws = Workspace::default();
        self.forward_cached(x, t, &mut ws)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&mut ws, upstream, &mut grad);
        Ok(grad)
    }

    /// Serializes to the versioned little-endian checkpoint layout.
    ///
    /// | offset | size | field |
    /// |---|---|---|
    /// | 0 | 8 | magic `b"HOLDNET\0"` |
    /// | 8 | 4 | format version (`u32`, currently 1) |
    /// | 12 | 4 | order `n` (`u32`) |
    /// | 16 | 4 | data dimension `d` (`u32`) |
    /// | 20 | 4 | depth (`u32`) |
    /// | 24 | 4 | width (`u32`) |
    /// | 28 | 4 | time-feature count (`u32`, currently 3) |
    /// | 32 | 8 | horizon `T` (`f64`) |
    /// | 40 | 8 | parameter count `P` (`u64`) |
    /// | 48 | 8·P | parameters (`f64`) in layer order: per hidden layer `W`, `b`, gain, shift; then output `W`, `b` |
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.arch.order, self.arch.dim, self.arch.depth, self.arch.width, TIME_FEATURES] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.arch.horizon.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint; `expected_state_len`, when given, must equal `n·d`.
    pub fn from_checkpoint_bytes(bytes: &[u8], expected_state_len: Option<usize>) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(format!("corrupt file: {msg}"));
        if bytes.len() < CHECKPOINT_HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let [order, dim, depth, width, time_features] =
            [12, 16, 20, 24, 28].map(|o| u32_at(o) as usize);
        if time_features != TIME_FEATURES {
            return Err(Error::Checkpoint(format!("unsupported time-feature count {time_features}")));
        }
        let horizon = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
        if let Some(expected) = expected_state_len {
            if order * dim != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: order * dim,
                });
            }
        }
        let arch = Architecture {
            order,
            dim,
            depth,
            width,
            horizon,
        };
        arch.validate().map_err(|_| corrupt("invalid architecture header"))?;
        if count != arch.num_params() {
            return Err(corrupt("parameter count does not match architecture"));
        }
        let body = &bytes[CHECKPOINT_HEADER_LEN..];
        if body.len() != 8 * count {
            return Err(corrupt("truncated parameter block"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(arch, params)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HOLDNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 48;

/// Row-major activations for a whole minibatch.
#[derive(Debug, Clone, Default)]
pub struct BatchWorkspace {
    rows: usize,
    inputs: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    pre_relu: Vec<Vec<f64>>,
    output: Vec<f64>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

/// `c = alpha · a · b + beta · c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices whose extents cover the strided
    // m × k, k × n and m × n views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

impl ScoreNetwork {
    /// Forward pass over `rows` inputs at once; `xs` is row-major
    /// `rows × nd` and the result is row-major `rows × d`.
    pub fn forward_batch<'w>(&self, xs: &[f64], ts: &[f64], ws: &'w mut BatchWorkspace) -> Result<&'w [f64]> {
        let rows = ts.len();
        let nd = self.arch.order * self.arch.dim;
        if xs.len() != rows * nd {
            return Err(Error::DimensionMismatch {
                expected: rows * nd,
                got: xs.len(),
            });
        }
        let depth = self.layout.len();
        ws.rows = rows;
        ws.inputs.resize_with(depth, Vec::new);
        ws.normalized.resize_with(depth - 1, Vec::new);
        ws.pre_relu.resize_with(depth - 1, Vec::new);
        ws.inv_std.resize_with(depth - 1, Vec::new);
        let mut encoded = Vec::with_capacity(self.arch.input_dim());
        let input = &mut ws.inputs[0];
        input.clear();
        for (x, &t) in xs.chunks_exact(nd).zip(ts) {
            self.check_input(x, t)?;
            self.encode_input(x, t, &mut encoded);
            input.extend_from_slice(&encoded);
        }

        for (l, s) in self.layout.iter().enumerate() {
            let (fi, fo) = (s.fan_in, s.fan_out);
            let w = &self.params[s.weight..s.bias];
            let b = &self.params[s.bias..s.bias + fo];
            let mut z = if l + 1 < depth {
                core::mem::take(&mut ws.pre_relu[l])
            } else {
                core::mem::take(&mut ws.output)
            };
            z.clear();
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            // Z = A Wᵀ + 1 bᵀ
            gemm(
                rows,
                fi,
                fo,
                1.0,
                (&ws.inputs[l], fi as isize, 1),
                (w, 1, fi as isize),
                1.0,
                (&mut z, fo as isize, 1),
            );
            if l + 1 == depth {
                ws.output = z;
                break;
            }
            let (g, h) = (s.gain.unwrap(), s.shift.unwrap());
            let gain = &self.params[g..g + fo];
            let shift = &self.params[h..h + fo];
            let inv_stds = &mut ws.inv_std[l];
            inv_stds.clear();
            let normalized = &mut ws.normalized[l];
            normalized.clear();
            let next = &mut ws.inputs[l + 1];
            next.clear();
            let m = fo as f64;
            for row in z.chunks_exact_mut(fo) {
                let mean = row.iter().sum::<f64>() / m;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                let inv_std = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
                inv_stds.push(inv_std);
                for ((zi, &gi), &hi) in row.iter_mut().zip(gain).zip(shift) {
                    let n = (*zi - mean) * inv_std;
                    normalized.push(n);
                    *zi = gi * n + hi;
                    next.push(zi.max(0.0));
                }
            }
            ws.pre_relu[l] = z;
        }
        if ws.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(&ws.output)
    }

    /// Accumulates `Σ_r ∂⟨upstream_r, output_r⟩/∂θ` into `grad` using the
    /// activations of the most recent [`ScoreNetwork::forward_batch`].
    pub fn backward_batch(&self, ws: &mut BatchWorkspace, upstream: &[f64], grad: &mut [f64]) {
        let rows = ws.rows;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(upstream.len(), rows * self.arch.output_dim());
        let mut delta = core::mem::take(&mut ws.delta);
        let mut next = core::mem::take(&mut ws.next);
        delta.clear();
        delta.extend_from_slice(upstream);
        for l in (0..self.layout.len()).rev() {
            let s = self.layout[l];
            let (fi, fo) = (s.fan_in, s.fan_out);
            if l + 1 < self.layout.len() {
                let (g, h) = (s.gain.unwrap(), s.shift.unwrap());
                let m = fo as f64;
                for (r, row) in delta.chunks_exact_mut(fo).enumerate() {
                    let normalized = &ws.normalized[l][r * fo..(r + 1) * fo];
                    let pre = &ws.pre_relu[l][r * fo..(r + 1) * fo];
                    let mut mean_dn = 0.0;
                    let mut mean_dn_n = 0.0;
                    for i in 0..fo {
                        let dv = if pre[i] <= 0.0 { 0.0 } else { row[i] };
                        grad[g + i] += dv * normalized[i];
                        grad[h + i] += dv;
                        let dn = dv * self.params[g + i];
                        mean_dn += dn;
                        mean_dn_n += dn * normalized[i];
                        row[i] = dn;
                    }
                    mean_dn /= m;
                    mean_dn_n /= m;
                    let inv_std = ws.inv_std[l][r];
                    for (dv, &n) in row.iter_mut().zip(normalized) {
                        *dv = inv_std * (*dv - mean_dn - n * mean_dn_n);
                    }
                }
            }
            for row in delta.chunks_exact(fo) {
                for (gb, &dz) in grad[s.bias..s.bias + fo].iter_mut().zip(row) {
                    *gb += dz;
                }
            }
            // dW += Δᵀ A
            gemm(
                fo,
                rows,
                fi,
                1.0,
                (&delta, 1, fo as isize),
                (&ws.inputs[l], fi as isize, 1),
                1.0,
                (&mut grad[s.weight..s.bias], fi as isize, 1),
            );
            if l > 0 {
                // dA = Δ W
                next.clear();
                next.resize(rows * fi, 0.0);
                gemm(
                    rows,
                    fo,
                    fi,
                    1.0,
                    (&delta, fo as isize, 1),
                    (&self.params[s.weight..s.bias], fi as isize, 1),
                    0.0,
                    (&mut next, fi as isize, 1),
                );
                core::mem::swap(&mut delta, &mut next);
            }
        }
        ws.delta = delta;
        ws.next = next;
    }
}

impl ScoreFn for ScoreNetwork {
    fn last_block_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.forward(x, t)
    }
}

#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], fan_in: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(b.iter().enumerate().map(|(i, &bi)| {
        let row = &w[i * fan_in..(i + 1) * fan_in];
        bi + dot(row, x)
    }));
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(depth: usize, width: usize) -> Architecture {
        Architecture {
            order: 2,
            dim: 2,
            depth,
            width,
            horizon: 1.0,
        }
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let a = arch(3, 8);
        // (7·8 + 8 + 16) + (8·8 + 8 + 16) + (8·2 + 2)
        assert_eq!(a.num_params(), 80 + 88 + 18);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ScoreNetwork::new(a, &mut rng).unwrap().num_params(), 186);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = ScoreNetwork::new(arch(4, 16), &mut rng).unwrap();
        net.zero_output_layer();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(net.forward(&[1.0, -2.0, 0.5, 3.0], t).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ScoreNetwork::new(arch(3, 8), &mut rng).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(net.forward(&x, 0.5).unwrap(), net.forward(&x, 0.5).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let net = ScoreNetwork::zeros(arch(2, 4)).unwrap();
        assert!(matches!(net.forward(&[0.0; 3], 0.0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(net.forward(&[f64::NAN, 0.0, 0.0, 0.0], 0.0), Err(Error::NonFinite(_))));
        assert!(net.forward(&[0.0; 4], f64::INFINITY).is_err());
    }

    #[test]
    fn hand_computed_single_hidden_layer() {
        // order 1, dim 2: input (x1, x2, τ, sin 2πτ, cos 2πτ); at t = 0 that is (x1, x2, 0, 0, 1).
        let a = Architecture {
            order: 1,
            dim: 2,
            depth: 2,
            width: 2,
            horizon: 1.0,
        };
        let mut net = ScoreNetwork::zeros(a).unwrap();
        {
            let (w, b) = net.layer_mut(0);
            w.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.5]);
            b.copy_from_slice(&[0.0, 1.0]);
        }
        {
            let (g, s) = net.norm_mut(0).unwrap();
            g.copy_from_slice(&[2.0, 1.0]);
            s.copy_from_slice(&[0.5, 0.0]);
        }
        {
            let (w, b) = net.layer_mut(1);
            w.copy_from_slice(&[1.0, 1.0, -1.0, 2.0]);
            b.copy_from_slice(&[0.0, 0.25]);
        }
        // z = (x1, x2 + 0.5 + 1) = (3, 1.5) for x = (3, 0); mean 2.25, var 0.5625.
        let z = [3.0, 1.5];
        let mean = 2.25;
        let inv = 1.0 / (0.5625f64 + LAYER_NORM_EPS).sqrt();
        let y0: f64 = 2.0 * (z[0] - mean) * inv + 0.5;
        let y1: f64 = 1.0 * (z[1] - mean) * inv + 0.0;
        let (h0, h1) = (y0.max(0.0), y1.max(0.0));
        let expected = [h0 + h1, -h0 + 2.0 * h1 + 0.25];
        let out = net.forward(&[3.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(out[0], expected[0], max_relative = 1e-14);
        assert_relative_eq!(out[1], expected[1], max_relative = 1e-14);
        // Spot value: y0 ≈ 2·0.75/0.75 + 0.5 = 2.5, y1 ≈ −1 (clipped).
        assert_relative_eq!(out[0], 2.5, epsilon = 1e-4);
        assert_relative_eq!(out[1], -2.25, epsilon = 1e-4);
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        let a = Architecture {
            order: 1,
            dim: 2,
            depth: 1,
            width: 0,
            horizon: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ScoreNetwork::new(a, &mut rng).unwrap();
        let x = [0.7, -1.3];
        let t = 0.5;
        let up = [2.0, -0.5];
        let g = net.gradient(&x, t, &up).unwrap();
        let mut input = Vec::new();
        net.encode_input(&x, t, &mut input);
        for i in 0..2 {
            for j in 0..input.len() {
                assert_relative_eq!(g[i * input.len() + j], up[i] * input[j], max_relative = 1e-15);
            }
            assert_eq!(g[2 * input.len() + i], up[i]);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ScoreNetwork::new(arch(3, 6), &mut rng).unwrap();
        let g = net.gradient(&[0.1, 0.2, 0.3, 0.4], 0.2, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = ScoreNetwork::new(arch(3, 5), &mut rng).unwrap();
        let bytes = net.to_checkpoint_bytes();
        assert_eq!(bytes.len(), 48 + 8 * net.num_params());
        let back = ScoreNetwork::from_checkpoint_bytes(&bytes, Some(4)).unwrap();
        assert_eq!(back, net);
        let x = [0.3, -0.1, 0.9, 0.0];
        assert_eq!(back.forward(&x, 0.4).unwrap(), net.forward(&x, 0.4).unwrap());

        assert!(matches!(
            ScoreNetwork::from_checkpoint_bytes(&bytes, Some(6)),
            Err(Error::DimensionMismatch { expected: 6, got: 4 })
        ));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            ScoreNetwork::from_checkpoint_bytes(truncated, None),
            Err(Error::Checkpoint(m)) if m.contains("corrupt")
        ));
        assert!(ScoreNetwork::from_checkpoint_bytes(&bytes[..20], None).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 7;
        assert!(matches!(
            ScoreNetwork::from_checkpoint_bytes(&wrong_version, None),
            Err(Error::Checkpoint(m)) if m.contains("version")
        ));
    }

    #[test]
    fn batch_path_matches_single_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = ScoreNetwork::new(arch(4, 9), &mut rng).unwrap();
        for p in net.params_mut() {
            *p += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        let rows = 7;
        let xs: Vec<f64> = (0..rows * 4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let ts: Vec<f64> = (0..rows).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let up: Vec<f64> = (0..rows * 2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let mut bw = BatchWorkspace::default();
        let out = net.forward_batch(&xs, &ts, &mut bw).unwrap().to_vec();
        let mut grad_batch = vec![0.0; net.num_params()];
        net.backward_batch(&mut bw, &up, &mut grad_batch);
        let mut grad_rows = vec![0.0; net.num_params()];
        let mut ws = Workspace::default();
        for r in 0..rows {
            let single = net.forward_cached(&xs[4 * r..4 * r + 4], ts[r], &mut ws).unwrap();
            for (a, b) in single.iter().zip(&out[2 * r..2 * r + 2]) {
                assert_relative_eq!(*a, *b, max_relative = 1e-12);
            }
            net.backward(&mut ws, &up[2 * r..2 * r + 2], &mut grad_rows);
        }
        for (a, b) in grad_batch.iter().zip(&grad_rows) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
