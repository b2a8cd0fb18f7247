//! Differentiable MLPs with manual reverse-mode gradients.
//!
//! A network is a stack of dense layers; every hidden layer is followed by
//! layer normalization and the Squish activation `x * squareplus'(x)`.
//! `forward` records an activation tape, `backward` turns an output gradient
//! into exact parameter gradients, and gradients from several forwards can be
//! accumulated into one [`GradientSet`] before an optimizer step.
//!
//! No batching, no GPU: the nets here are small (hidden width 100) and the
//! hot loops are plain `f64` slice arithmetic.

pub mod checkpoint;
mod optim;

pub use checkpoint::{load_network, read_network, save_network, write_network, CheckpointError};
pub use optim::OptimizerState;

use rand::Rng;
use thiserror::Error;

/// Squareplus hyperparameter; this value makes `squareplus(0) = 1`.
pub const SQUISH_B: f64 = 4.0;

/// Stabilizer added to the layer-norm variance before the square root.
pub const NORM_DELTA: f64 = 1e-5;

/// Hidden width used by the full-size policy/value networks.
pub const HIDDEN_WIDTH: usize = 100;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network needs at least one hidden layer (got widths {0:?})")]
    TooFewLayers(usize),
    #[error("stale or mismatched tape (network has changed since forward)")]
    StaleTape,
    #[error("non-finite gradient in chunk `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("shape mismatch between networks or gradient sets")]
    ShapeMismatch,
}

/// `squareplus'(x)` with the crate-default hyperparameter [`SQUISH_B`].
#[inline]
pub fn squareplus_deriv(x: f64) -> f64 {
    0.5 * (1.0 + x / (x * x + SQUISH_B).sqrt())
}

/// Squish activation: `x * squareplus'(x)`. Smooth, monotone, asymptotically
/// identity for large positive inputs.
#[inline]
pub fn squish(x: f64) -> f64 {
    x * squareplus_deriv(x)
}

/// Exact derivative of [`squish`].
#[inline]
pub fn squish_deriv(x: f64) -> f64 {
    let s = (x * x + SQUISH_B).sqrt();
    0.5 * (1.0 + x / s) + x * SQUISH_B / (2.0 * s * s * s)
}

/// Layer normalization over one vector: `gain * (x - mean)/sqrt(var + delta) + bias`.
///
/// Variance is the biased (1/n) estimate; `delta` keeps constant inputs finite.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], delta: f64) -> Vec<f64> {
    assert!(x.len() >= 2, "layer_norm needs at least two entries");
    assert_eq!(x.len(), gain.len());
    assert_eq!(x.len(), bias.len());
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + delta).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias.iter()))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv_std + b)
        .collect()
}

#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    /// Row-major `(rows, cols)`: one contiguous row per output unit.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        // Uniform fan-in scaling.
        let limit = 1.0 / (cols as f64).sqrt();
        let weight = (0..rows * cols)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        Dense {
            rows,
            cols,
            weight,
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (j, out_j) in out.iter_mut().enumerate() {
            let row = &self.weight[j * self.cols..(j + 1) * self.cols];
            let mut acc = self.bias[j];
            for (w, x) in row.iter().zip(input.iter()) {
                acc += w * x;
            }
            *out_j = acc;
        }
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

/// Activation record from one [`MlpNetwork::forward`] call.
///
/// Holds everything `backward` needs, plus the output itself. A tape is tied
/// to the parameter version it was recorded against; mutating the network
/// invalidates it.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    version: u64,
    input: Vec<f64>,
    hidden: Vec<HiddenTrace>,
    /// Network output of the recorded forward pass.
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct HiddenTrace {
    /// Normalized pre-gain activations `(z - mean)/sqrt(var + delta)`.
    xhat: Vec<f64>,
    inv_std: f64,
    /// Post-norm, pre-activation values fed to Squish.
    pre_act: Vec<f64>,
    /// Post-activation values (input to the next layer).
    post_act: Vec<f64>,
}

/// Per-parameter gradients matching one network's shapes.
///
/// `backward` accumulates into it, so gradients of a sum of several forwards
/// are obtained by reusing the same set.
#[derive(Debug, Clone)]
pub struct GradientSet {
    chunks: Vec<Vec<f64>>,
}

impl GradientSet {
    /// Sets every entry to zero, keeping the shapes.
    pub fn zero(&mut self) {
        for c in &mut self.chunks {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.chunks {
            c.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds another gradient set of identical shape.
    pub fn add(&mut self, other: &GradientSet) -> Result<(), NnError> {
        if self.chunks.len() != other.chunks.len() {
            return Err(NnError::ShapeMismatch);
        }
        for (a, b) in self.chunks.iter_mut().zip(other.chunks.iter()) {
            if a.len() != b.len() {
                return Err(NnError::ShapeMismatch);
            }
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        Ok(())
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.chunks.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.chunks
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flat view of all entries in canonical chunk order.
    pub fn flat(&self) -> Vec<f64> {
        self.chunks.iter().flat_map(|c| c.iter().copied()).collect()
    }

    pub(crate) fn chunks(&self) -> &[Vec<f64>] {
        &self.chunks
    }

    #[cfg(test)]
    pub(crate) fn chunks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.chunks
    }
}

/// A fully connected network: `input -> [dense -> norm -> squish]* -> dense`.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    widths: Vec<usize>,
    layers: Vec<Dense>,
    norms: Vec<Norm>,
    version: u64,
}

impl MlpNetwork {
    /// Builds a network with the given layer widths `[input, hidden.., output]`
    /// and uniform fan-in initialization. At least one hidden layer.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self, NnError> {
        if widths.len() < 3 {
            return Err(NnError::TooFewLayers(widths.len()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NnError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            layers.push(Dense::init(pair[1], pair[0], rng));
        }
        let norms = widths[1..widths.len() - 1]
            .iter()
            .map(|&w| Norm {
                gain: vec![1.0; w],
                bias: vec![0.0; w],
            })
            .collect();
        Ok(MlpNetwork {
            widths: widths.to_vec(),
            layers,
            norms,
            version: 0,
        })
    }

    /// Convenience constructor for the full-size two-hidden-layer shape.
    pub fn with_default_hidden(
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Self::new(&[input, HIDDEN_WIDTH, HIDDEN_WIDTH, output], rng)
    }

    /// Scales the final layer's weights and biases, e.g. to start a policy
    /// head near zero.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("network has layers");
        last.weight.iter_mut().for_each(|w| *w *= factor);
        last.bias.iter_mut().for_each(|b| *b *= factor);
        self.version += 1;
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Monotone counter bumped on every parameter mutation; tapes remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self
                .norms
                .iter()
                .map(|n| n.gain.len() + n.bias.len())
                .sum::<usize>()
    }

    /// Named parameter arrays in canonical declaration order.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.weight"), layer.weight.as_slice()));
            out.push((format!("layer{k}.bias"), layer.bias.as_slice()));
            if k < self.norms.len() {
                out.push((format!("norm{k}.gain"), self.norms[k].gain.as_slice()));
                out.push((format!("norm{k}.bias"), self.norms[k].bias.as_slice()));
            }
        }
        out
    }

    fn param_chunks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let norms = &mut self.norms;
        let mut tail: Vec<Option<&mut Norm>> = norms.iter_mut().map(Some).collect();
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if k < tail.len() {
                let norm = tail[k].take().expect("norm visited once");
                out.push(&mut norm.gain);
                out.push(&mut norm.bias);
            }
        }
        out
    }

    /// Overwrites all parameters from a flat chunk list (canonical order).
    pub(crate) fn set_param_chunks(&mut self, chunks: &[Vec<f64>]) -> Result<(), NnError> {
        let mut mine = self.param_chunks_mut();
        if mine.len() != chunks.len() {
            return Err(NnError::ShapeMismatch);
        }
        for (dst, src) in mine.iter_mut().zip(chunks.iter()) {
            if dst.len() != src.len() {
                return Err(NnError::ShapeMismatch);
            }
            dst.copy_from_slice(src);
        }
        self.version += 1;
        Ok(())
    }

    /// A zeroed gradient set matching this network's shapes.
    pub fn gradients(&self) -> GradientSet {
        GradientSet {
            chunks: self.parameters().iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
        }
    }

    /// Runs the network, reusing `tape` storage. The output lands in
    /// `tape.output`.
    pub fn forward_into(&self, input: &[f64], tape: &mut Tape) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        let n_hidden = self.norms.len();
        tape.version = self.version;
        tape.input.clear();
        tape.input.extend_from_slice(input);
        tape.hidden.resize_with(n_hidden, HiddenTrace::default);

        for k in 0..n_hidden {
            let width = self.widths[k + 1];
            // Split borrow: trace for this layer, input from the previous one.
            let (done, rest) = tape.hidden.split_at_mut(k);
            let trace = &mut rest[0];
            let cur: &[f64] = if k == 0 {
                &tape.input
            } else {
                &done[k - 1].post_act
            };
            trace.pre_act.resize(width, 0.0);
            self.layers[k].apply(cur, &mut trace.pre_act);

            // pre_act currently holds z; normalize it in place while keeping
            // xhat for the backward pass.
            let n = width as f64;
            let mean = trace.pre_act.iter().sum::<f64>() / n;
            let var = trace
                .pre_act
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            let inv_std = 1.0 / (var + NORM_DELTA).sqrt();
            trace.inv_std = inv_std;
            trace.xhat.resize(width, 0.0);
            trace.post_act.resize(width, 0.0);
            let norm = &self.norms[k];
            for i in 0..width {
                let xh = (trace.pre_act[i] - mean) * inv_std;
                trace.xhat[i] = xh;
                trace.pre_act[i] = norm.gain[i] * xh + norm.bias[i];
                trace.post_act[i] = squish(trace.pre_act[i]);
            }
        }
        tape.output.resize(self.output_dim(), 0.0);
        self.layers[n_hidden].apply(&tape.hidden[n_hidden - 1].post_act, &mut tape.output);
        Ok(())
    }

    /// Runs the network and returns `(output, tape)`.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        let mut tape = Tape::default();
        self.forward_into(input, &mut tape)?;
        Ok((tape.output.clone(), tape))
    }

    /// Accumulates exact parameter gradients of `output . output_grad` into
    /// `grads`. The tape must come from a forward pass against the current
    /// parameters.
    pub fn backward(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut GradientSet,
    ) -> Result<(), NnError> {
        if tape.version != self.version || tape.input.len() != self.input_dim() {
            return Err(NnError::StaleTape);
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let n_hidden = self.norms.len();
        debug_assert_eq!(grads.chunks.len(), 2 * self.layers.len() + 2 * n_hidden);

        // Chunk index of layer k's weight within the canonical ordering
        // (weight, bias, gain, bias per hidden layer; weight, bias for the last).
        let chunk_of_layer = |k: usize| 4 * k;

        let mut delta: Vec<f64> = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let layer_input: &[f64] = if k == 0 {
                &tape.input
            } else {
                &tape.hidden[k - 1].post_act
            };
            {
                let base = chunk_of_layer(k);
                let (w_chunk, rest) = grads.chunks[base..].split_at_mut(1);
                let dw = &mut w_chunk[0];
                let db = &mut rest[0];
                for (j, &d) in delta.iter().enumerate() {
                    db[j] += d;
                    let row = &mut dw[j * layer.cols..(j + 1) * layer.cols];
                    for (g, x) in row.iter_mut().zip(layer_input.iter()) {
                        *g += d * x;
                    }
                }
            }
            if k == 0 {
                break;
            }
            // Propagate to the previous layer's post-activation.
            let mut d_prev = vec![0.0; layer.cols];
            for (j, &d) in delta.iter().enumerate() {
                let row = &layer.weight[j * layer.cols..(j + 1) * layer.cols];
                for (dp, w) in d_prev.iter_mut().zip(row.iter()) {
                    *dp += d * w;
                }
            }
            // Through Squish, then layer norm of hidden layer k-1.
            let trace = &tape.hidden[k - 1];
            let norm = &self.norms[k - 1];
            let width = d_prev.len();
            let n = width as f64;
            for i in 0..width {
                d_prev[i] *= squish_deriv(trace.pre_act[i]);
            }
            let base = chunk_of_layer(k - 1) + 2;
            let (gain_chunk, rest) = grads.chunks[base..].split_at_mut(1);
            let dgain = &mut gain_chunk[0];
            let dbias = &mut rest[0];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for i in 0..width {
                dgain[i] += d_prev[i] * trace.xhat[i];
                dbias[i] += d_prev[i];
                let dxh = d_prev[i] * norm.gain[i];
                d_prev[i] = dxh;
                mean_dxh += dxh;
                mean_dxh_xh += dxh * trace.xhat[i];
            }
            mean_dxh /= n;
            mean_dxh_xh /= n;
            for i in 0..width {
                d_prev[i] =
                    trace.inv_std * (d_prev[i] - mean_dxh - trace.xhat[i] * mean_dxh_xh);
            }
            delta = d_prev;
        }
        Ok(())
    }

    /// Polyak update: every parameter moves `tau` of the way to `online`.
    pub fn soft_update_from(&mut self, online: &MlpNetwork, tau: f64) -> Result<(), NnError> {
        if self.widths != online.widths {
            return Err(NnError::ShapeMismatch);
        }
        let src: Vec<Vec<f64>> = online.parameters().iter().map(|(_, p)| p.to_vec()).collect();
        for (dst, s) in self.param_chunks_mut().iter_mut().zip(src.iter()) {
            for (d, o) in dst.iter_mut().zip(s.iter()) {
                *d = (1.0 - tau) * *d + tau * o;
            }
        }
        self.version += 1;
        Ok(())
    }
}
