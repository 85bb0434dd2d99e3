//! Parameterized layers. Each layer owns `ParamId`s into a model's
//! [`ParamStore`] and records its forward pass on a [`Graph`].

use alloc::format;
use alloc::vec::Vec;

use super::graph::{Graph, Padding, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::math;
use crate::rng::{self, Rng};

/// Kaiming-uniform weights: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = math::sqrt(6.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng::uniform(rng) - 1.0) * bound).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let w = kaiming_uniform(rng, &[in_dim, out_dim], in_dim);
        Self::with_weight(store, name, w)
    }

    /// All-zero weights and bias: the layer outputs zeros until trained.
    pub fn zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_weight(store, name, Tensor::zeros(&[in_dim, out_dim]))
    }

    fn with_weight(store: &mut ParamStore, name: &str, w: Tensor) -> Result<Self> {
        let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_broadcast(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = kernel * in_channels;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(rng, &[fan_in, out_channels], fan_in),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
            dilation,
            in_channels,
            out_channels,
        })
    }

    /// `[B, L, C_in] -> [B, ceil(L / stride), C_out]` under same-padding.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, Some(b), self.kernel, self.stride, self.dilation, Padding::Same)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, Self::EPS);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul_broadcast(n, gamma)?;
        g.add_broadcast(y, beta)
    }
}

/// Multi-head self-attention over `[B, L, D]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(crate::Error::invalid(format!("{dim} not divisible into {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let a = g.attention(q, k, v, self.heads)?;
        self.output.forward(g, store, a)
    }
}

/// `x + conv1x1(relu(conv_k3_dilated(relu(x))))`, length preserving.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub dilated: Conv1d,
    pub pointwise: Conv1d,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, dilation: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            dilated: Conv1d::new(store, &format!("{name}.dilated"), channels, channels, 3, 1, dilation, rng)?,
            pointwise: Conv1d::new(store, &format!("{name}.pointwise"), channels, channels, 1, 1, 1, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = g.relu(x);
        let h = self.dilated.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.pointwise.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), dim, ff_dim, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff_dim, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, store, x)?;
        let h = self.attention.forward(g, store, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, store, x)?;
        let h = self.ff_in.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.ff_out.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = math::exp(-((2 * (i / 2)) as f64) / dim as f64 * math::ln(10_000.0));
            let angle = pos as f64 * rate;
            data.push(if i % 2 == 0 { math::sin(angle) } else { math::cos(angle) });
        }
    }
    Tensor::from_parts(alloc::vec![len, dim], data)
}

/// Transformer encoder over feature sequences: input projection, sinusoidal
/// positions, `layers` pre-norm blocks, final norm and mean pooling over time.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    pub input: Linear,
    pub layers: Vec<TransformerLayer>,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl SequenceEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let input = Linear::new(store, &format!("{name}.input"), in_dim, dim, rng)?;
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layer{i}"), dim, heads, ff_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim)?;
        Ok(Self { input, layers, norm, dim })
    }

    /// `[B, L, in_dim] -> [B, dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let len = g.shape(x)[1];
        let h = self.input.forward(g, store, x)?;
        let pos = g.constant(sinusoidal_positions(len, self.dim));
        let mut h = g.add_broadcast(h, pos)?;
        for layer in &self.layers {
            h = layer.forward(g, store, h)?;
        }
        let h = self.norm.forward(g, store, h)?;
        g.mean_time(h)
    }
}
