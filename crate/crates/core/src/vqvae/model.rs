use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::codebook::{Codebook, QuantizerMode, Quantized};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Conv1d, Graph, Linear, ParamStore, ResidualBlock, Tensor, Var};
use crate::rng::{Rng, SeedStream};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VqvaeConfig {
    /// Per-frame feature width, `7N`.
    pub feature_dim: usize,
    /// Channel width of the convolution stacks.
    pub width: usize,
    /// Code dimension `d_c`; also the encoder output width.
    pub code_dim: usize,
    /// Number of codes `K`.
    pub codebook_size: usize,
    /// Width of each projected conditioning vector.
    pub cond_dim: usize,
    /// Habit latent dimension.
    pub habit_dim: usize,
    /// Width of the category text vector fed to the decoder.
    pub text_dim: usize,
    /// Width of raw category embeddings when the 256-wide remap is learned
    /// with the model; `None` feeds text vectors directly.
    pub raw_text_dim: Option<usize>,
    /// Stride-2 stages; the temporal downsampling rate is `2^stages`.
    pub stages: usize,
    pub dilation: usize,
    /// Softmax temperature of the quantizer.
    pub temperature: f64,
    /// Remove each window's temporal mean from the non-root joint rotations
    /// before encoding, so static posture reaches the decoder only through
    /// the conditioning.
    pub center_pose: bool,
}

impl VqvaeConfig {
    /// Reference sizes: 512 codes of width 512.
    pub fn paper(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            width: 512,
            code_dim: 512,
            codebook_size: 512,
            cond_dim: 64,
            habit_dim: 64,
            text_dim: 256,
            raw_text_dim: None,
            stages: 2,
            dilation: 3,
            temperature: 0.5,
            center_pose: true,
        }
    }

    /// Desk-scale sizes: 64 codes of width 64.
    pub fn desk(feature_dim: usize) -> Self {
        Self {
            width: 64,
            code_dim: 64,
            codebook_size: 64,
            ..Self::paper(feature_dim)
        }
    }

    pub fn downsampling(&self) -> usize {
        1 << self.stages
    }

    /// Latent length for `frames` input frames.
    pub fn latent_len(&self, frames: usize) -> usize {
        (0..self.stages).fold(frames, |l, _| l.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.width,
            self.code_dim,
            self.codebook_size,
            self.cond_dim,
            self.habit_dim,
            self.text_dim,
            self.dilation,
        ];
        if dims.contains(&0) || self.raw_text_dim == Some(0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv1d,
    blocks: Vec<ResidualBlock>,
}

/// Conditioning inputs of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    /// Habit latent `z_c`.
    pub habit: Vec<f64>,
    /// Category text vector: raw embedding when the model learns the remap,
    /// otherwise the 256-wide `g_c`.
    pub text: Vec<f64>,
}

/// Convolutional VQ-VAE over `[B, T, 7N]` feature sequences with habit and
/// text conditioning on the decoder.
#[derive(Clone, Debug)]
pub struct VqvaeModel {
    pub config: VqvaeConfig,
    pub store: ParamStore,
    pub codebook: Codebook,
    /// Frames per processing window at inference; training sets it to the
    /// crop length so every window sees the context length it was fit on.
    /// `None` processes sequences whole.
    pub window: Option<usize>,
    encoder_in: Conv1d,
    encoder_stages: Vec<Stage>,
    encoder_out: Conv1d,
    decoder_in: Conv1d,
    decoder_stages: Vec<Stage>,
    decoder_mid: Conv1d,
    decoder_out: Conv1d,
    habit_projection: Linear,
    text_projection: Linear,
    text_remap: Option<Linear>,
}

impl VqvaeModel {
    /// Fresh model with seeded weights. The codebook starts at zero; training
    /// re-initialises it from encoder outputs.
    pub fn new(config: VqvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedStream::new(seed).rng("vqvae.init");
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let (w, d) = (config.width, config.dilation);
        let blocks = |s: &mut ParamStore, name: &str, rng: &mut Rng| -> Result<Vec<ResidualBlock>> {
            Ok(vec![
                ResidualBlock::new(s, &format!("{name}.res0"), w, d, rng)?,
                ResidualBlock::new(s, &format!("{name}.res1"), w, 1, rng)?,
            ])
        };
        let encoder_in = Conv1d::new(s, "encoder.in", config.feature_dim, w, 3, 1, 1, rng)?;
        let mut encoder_stages = Vec::new();
        for i in 0..config.stages {
            let name = format!("encoder.stage{i}");
            let conv = Conv1d::new(s, &format!("{name}.down"), w, w, 4, 2, 1, rng)?;
            encoder_stages.push(Stage {
                conv,
                blocks: blocks(s, &name, rng)?,
            });
        }
        let encoder_out = Conv1d::new(s, "encoder.out", w, config.code_dim, 3, 1, 1, rng)?;

        let decoder_in = Conv1d::new(s, "decoder.in", config.code_dim + 2 * config.cond_dim, w, 3, 1, 1, rng)?;
        let mut decoder_stages = Vec::new();
        for i in 0..config.stages {
            let name = format!("decoder.stage{i}");
            let b = blocks(s, &name, rng)?;
            let conv = Conv1d::new(s, &format!("{name}.up"), w, w, 3, 1, 1, rng)?;
            decoder_stages.push(Stage { conv, blocks: b });
        }
        let decoder_mid = Conv1d::new(s, "decoder.mid", w, w, 3, 1, 1, rng)?;
        let decoder_out = Conv1d::new(s, "decoder.out", w, config.feature_dim, 3, 1, 1, rng)?;
        let habit_projection = Linear::new(s, "condition.habit", config.habit_dim, config.cond_dim, rng)?;
        let text_projection = Linear::new(s, "condition.text", config.text_dim, config.cond_dim, rng)?;
        let text_remap = match config.raw_text_dim {
            Some(raw) => Some(Linear::new(s, "condition.remap", raw, config.text_dim, rng)?),
            None => None,
        };
        let codebook = Codebook::from_codes(Tensor::zeros(&[config.codebook_size, config.code_dim]))?;
        Ok(Self {
            config,
            store,
            codebook,
            window: None,
            encoder_in,
            encoder_stages,
            encoder_out,
            decoder_in,
            decoder_stages,
            decoder_mid,
            decoder_out,
            habit_projection,
            text_projection,
            text_remap,
        })
    }

    /// `[B, T, 7N] -> [B, ceil(T / 2^stages), d_c]`.
    pub fn encode_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let width = *g.shape(x).last().unwrap_or(&0);
        if g.shape(x).len() != 3 || width != self.config.feature_dim {
            return Err(Error::shape(
                "encode",
                format!("expected [B, T, {}], got {:?}", self.config.feature_dim, g.shape(x)),
            ));
        }
        let s = &self.store;
        let mut h = self.encoder_in.forward(g, s, x)?;
        h = g.relu(h);
        for stage in &self.encoder_stages {
            h = stage.conv.forward(g, s, h)?;
            for b in &stage.blocks {
                h = b.forward(g, s, h)?;
            }
        }
        self.encoder_out.forward(g, s, h)
    }

    /// Maps `[B, raw]` embeddings to `[B, text_dim]` through the learned remap,
    /// or passes text vectors through when the model has none.
    pub fn text_graph(&self, g: &mut Graph, text: Var) -> Result<Var> {
        match &self.text_remap {
            Some(remap) => remap.forward(g, &self.store, text),
            None => Ok(text),
        }
    }

    /// Decodes `[B, L', d_c]` codes with `[B, d_z]` habits and `[B, text]`
    /// vectors (after [`Self::text_graph`]) into `[B, frames, 7N]`.
    pub fn decode_graph(&self, g: &mut Graph, codes: Var, habit: Var, text: Var, frames: usize) -> Result<Var> {
        let (b, len) = match *g.shape(codes) {
            [b, l, c] if c == self.config.code_dim => (b, l),
            ref s => return Err(Error::shape("decode", format!("codes {s:?}"))),
        };
        if g.shape(habit) != [b, self.config.habit_dim] {
            return Err(Error::shape("decode", format!("habit latent {:?}", g.shape(habit))));
        }
        if g.shape(text) != [b, self.config.text_dim] {
            return Err(Error::shape("decode", format!("text vector {:?}", g.shape(text))));
        }
        if frames == 0 || frames > len * self.config.downsampling() {
            return Err(Error::shape("decode", format!("{frames} frames from latent length {len}")));
        }
        let s = &self.store;
        let zc = self.habit_projection.forward(g, s, habit)?;
        let gc = self.text_projection.forward(g, s, text)?;
        let zc = g.broadcast_time(zc, len)?;
        let gc = g.broadcast_time(gc, len)?;
        let x = g.concat_last(&[codes, zc, gc])?;
        let mut h = self.decoder_in.forward(g, s, x)?;
        h = g.relu(h);
        for stage in &self.decoder_stages {
            for blk in &stage.blocks {
                h = blk.forward(g, s, h)?;
            }
            h = g.upsample_nearest(h, 2)?;
            h = stage.conv.forward(g, s, h)?;
        }
        h = self.decoder_mid.forward(g, s, h)?;
        h = g.relu(h);
        let out = self.decoder_out.forward(g, s, h)?;
        g.crop_time(out, 0, frames)
    }

    /// What the encoder sees of `[.., T, 7N]` features: the input itself, or
    /// with the non-root rotation channels centred over time when
    /// `center_pose` is set.
    pub fn encoder_input(&self, features: &Tensor) -> Result<Tensor> {
        let shape = features.shape().to_vec();
        let (t, w) = match shape[..] {
            [t, w] | [_, t, w] => (t, w),
            _ => return Err(Error::shape("encoder_input", format!("expected [.., T, F], got {shape:?}"))),
        };
        if w != self.config.feature_dim {
            return Err(Error::shape("encoder_input", format!("feature width {w}, expected {}", self.config.feature_dim)));
        }
        if !self.config.center_pose || t == 0 {
            return Ok(features.clone());
        }
        let rot = 4 * (w / 7);
        let mut data = features.data().to_vec();
        for seq in data.chunks_mut(t * w) {
            for ch in 4..rot {
                let mean = (0..t).map(|i| seq[i * w + ch]).sum::<f64>() / t as f64;
                for i in 0..t {
                    seq[i * w + ch] -= mean;
                }
            }
        }
        Tensor::new(shape, data)
    }

    /// Latents `[L', d_c]` of one `[T, 7N]` feature sequence.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let [t, w] = *features.shape() else {
            return Err(Error::shape("encode", format!("expected [T, F], got {:?}", features.shape())));
        };
        let mut g = Graph::new();
        let x = g.constant(self.encoder_input(features)?.reshape(&[1, t, w])?);
        let f = self.encode_graph(&mut g, x)?;
        g.check_finite()?;
        let len = g.shape(f)[1];
        g.value(f).clone().reshape(&[len, self.config.code_dim])
    }

    pub fn quantize(&self, latents: &Tensor, mode: QuantizerMode, rng: Option<&mut Rng>) -> Result<Quantized> {
        self.codebook.quantize(latents, self.config.temperature, mode, rng)
    }

    /// `[frames, 7N]` decoded from `[L', d_c]` codes and one condition.
    pub fn decode(&self, codes: &Tensor, condition: &Condition, frames: usize) -> Result<Tensor> {
        let [len, d] = *codes.shape() else {
            return Err(Error::shape("decode", format!("codes {:?}", codes.shape())));
        };
        let mut g = Graph::new();
        let c = g.constant(codes.clone().reshape(&[1, len, d])?);
        let (habit, text) = self.condition_vars(&mut g, core::slice::from_ref(condition))?;
        let out = self.decode_graph(&mut g, c, habit, text, frames)?;
        g.check_finite()?;
        g.value(out).clone().reshape(&[frames, self.config.feature_dim])
    }

    /// Graph leaves for a batch of conditions: `[B, d_z]` habits and the
    /// `[B, text_dim]` text vectors (remapped if the model learns the remap).
    pub fn condition_vars(&self, g: &mut Graph, conditions: &[Condition]) -> Result<(Var, Var)> {
        let raw = self.config.raw_text_dim.unwrap_or(self.config.text_dim);
        let b = conditions.len();
        let mut habits = Vec::with_capacity(b * self.config.habit_dim);
        let mut texts = Vec::with_capacity(b * raw);
        for c in conditions {
            if c.habit.len() != self.config.habit_dim {
                return Err(Error::shape("condition", format!("habit latent of width {}", c.habit.len())));
            }
            if c.text.len() != raw {
                return Err(Error::shape("condition", format!("text vector of width {}, expected {raw}", c.text.len())));
            }
            habits.extend_from_slice(&c.habit);
            texts.extend_from_slice(&c.text);
        }
        let habit = g.constant(Tensor::matrix(b, self.config.habit_dim, habits));
        let text = g.constant(Tensor::matrix(b, raw, texts));
        let text = self.text_graph(g, text)?;
        Ok((habit, text))
    }

    /// `(start, first kept frame, end)` of each window over `frames`. The
    /// last window is aligned to the end and keeps only frames not already
    /// covered.
    pub fn window_spans(&self, frames: usize) -> Vec<(usize, usize, usize)> {
        let w = match self.window {
            Some(w) if w > 0 && frames > w => w,
            _ => return vec![(0, 0, frames)],
        };
        let mut spans = Vec::new();
        let mut next = 0;
        while next < frames {
            let start = next.min(frames - w);
            spans.push((start, next, start + w));
            next = start + w;
        }
        spans
    }

    /// Encode, quantize, decode, window by window: the model's
    /// reconstruction of a `[T, 7N]` sequence under `condition`.
    pub fn reconstruct(
        &self,
        features: &Tensor,
        condition: &Condition,
        mode: QuantizerMode,
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor> {
        let [frames, width] = *features.shape() else {
            return Err(Error::shape("reconstruct", format!("expected [T, F], got {:?}", features.shape())));
        };
        let mut out = vec![0.0; frames * width];
        for (start, keep, end) in self.window_spans(frames) {
            let part = Tensor::new(vec![end - start, width], features.data()[start * width..end * width].to_vec())?;
            let latents = self.encode(&part)?;
            let q = self.quantize(&latents, mode, rng.as_deref_mut())?;
            let decoded = self.decode(&q.codes, condition, end - start)?;
            out[keep * width..end * width].copy_from_slice(&decoded.data()[(keep - start) * width..]);
        }
        Tensor::new(vec![frames, width], out)
    }

    /// Argmax code indices of every window of a `[T, 7N]` sequence.
    pub fn code_indices(&self, features: &Tensor) -> Result<Vec<usize>> {
        let [frames, width] = *features.shape() else {
            return Err(Error::shape("code_indices", format!("expected [T, F], got {:?}", features.shape())));
        };
        let mut all = Vec::new();
        for (start, _, end) in self.window_spans(frames) {
            let part = Tensor::new(vec![end - start, width], features.data()[start * width..end * width].to_vec())?;
            all.extend(self.quantize(&self.encode(&part)?, QuantizerMode::Argmax, None)?.indices);
        }
        Ok(all)
    }

    /// Learned remap weights `([raw, text_dim], [text_dim])`, if any.
    pub fn text_remap(&self) -> Option<(Tensor, Tensor)> {
        self.text_remap
            .as_ref()
            .map(|l| (self.store.value(l.weight).clone(), self.store.value(l.bias).clone()))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        ck.set_text("kind", "vqvae")?;
        for (name, v) in [
            ("config.feature_dim", c.feature_dim),
            ("config.width", c.width),
            ("config.code_dim", c.code_dim),
            ("config.codebook_size", c.codebook_size),
            ("config.cond_dim", c.cond_dim),
            ("config.habit_dim", c.habit_dim),
            ("config.text_dim", c.text_dim),
            ("config.raw_text_dim", c.raw_text_dim.unwrap_or(0)),
            ("config.stages", c.stages),
            ("config.dilation", c.dilation),
        ] {
            ck.set_scalar(name, v as f64)?;
        }
        ck.set_scalar("config.temperature", c.temperature)?;
        ck.set_scalar("config.center_pose", if c.center_pose { 1.0 } else { 0.0 })?;
        ck.set_scalar("window", self.window.unwrap_or(0) as f64)?;
        ck.insert("codebook.codes", self.codebook.codes().clone())?;
        ck.insert("codebook.cluster_size", Tensor::vector(self.codebook.cluster_size().to_vec()))?;
        ck.insert("codebook.embed_sum", self.codebook.embed_sum().clone())?;
        ck.insert(
            "codebook.age",
            Tensor::vector(self.codebook.age().iter().map(|&a| a as f64).collect()),
        )?;
        ck.insert_params("param.", &self.store)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.text("kind")? != "vqvae" {
            return Err(Error::Checkpoint("not a VQ-VAE checkpoint".to_string()));
        }
        let raw = ck.usize("config.raw_text_dim")?;
        let config = VqvaeConfig {
            feature_dim: ck.usize("config.feature_dim")?,
            width: ck.usize("config.width")?,
            code_dim: ck.usize("config.code_dim")?,
            codebook_size: ck.usize("config.codebook_size")?,
            cond_dim: ck.usize("config.cond_dim")?,
            habit_dim: ck.usize("config.habit_dim")?,
            text_dim: ck.usize("config.text_dim")?,
            raw_text_dim: (raw > 0).then_some(raw),
            stages: ck.usize("config.stages")?,
            dilation: ck.usize("config.dilation")?,
            temperature: ck.scalar("config.temperature")?,
            center_pose: ck.usize("config.center_pose")? == 1,
        };
        let mut model = Self::new(config, 0)?;
        let window = ck.usize("window")?;
        model.window = (window > 0).then_some(window);
        ck.load_params("param.", &mut model.store)?;
        model.codebook = Codebook::from_parts(
            ck.require("codebook.codes")?.clone(),
            ck.require("codebook.cluster_size")?.data().to_vec(),
            ck.require("codebook.embed_sum")?.clone(),
            ck.require("codebook.age")?.data().iter().map(|&a| a as u64).collect(),
        )?;
        Ok(model)
    }
}
