use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::codebook::{perplexity, Codebook, QuantizerMode};
use super::loss::vq_loss;
use super::model::{Condition, VqvaeModel};
use crate::error::{Error, Result};
use crate::motion::{stack_crops, CropSampler, Motion};
use crate::nn::{AdamW, Graph, Tensor};
use crate::rng::{uniform_index, SeedStream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the velocity reconstruction term.
    pub alpha: f64,
    /// Commitment weight.
    pub beta: f64,
    /// EMA decay of codebook statistics.
    pub ema_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Learning rate for the first half of training.
    pub learning_rate: f64,
    /// Learning rate for the second half.
    pub late_learning_rate: f64,
    pub weight_decay: f64,
    /// Frames per training crop.
    pub crop_len: usize,
    /// Random crops drawn from every sequence per pass over the data.
    pub crops_per_sequence: usize,
    /// Codes unused for this many iterations are re-initialised.
    pub reset_age: u64,
    pub mode: QuantizerMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper(seed: u64) -> Self {
        Self {
            alpha: 0.5,
            beta: 0.02,
            ema_decay: 0.99,
            batch_size: 32,
            iterations: 200_000,
            learning_rate: 2e-4,
            late_learning_rate: 1e-5,
            weight_decay: 0.0,
            crop_len: 10,
            crops_per_sequence: 10,
            reset_age: 256,
            mode: QuantizerMode::Sample,
            seed,
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            iterations: 4000,
            ..Self::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("EMA decay must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.crop_len < 2 || self.crops_per_sequence == 0 {
            return Err(Error::invalid("batch size, iterations, crop length and crops per sequence must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if iteration < self.iterations / 2 {
            self.learning_rate
        } else {
            self.late_learning_rate
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based iteration.
    pub iteration: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub embedding: f64,
    pub commitment: f64,
    /// Code-usage perplexity of the iteration's batch.
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Code-usage perplexity over every latent of the training sequences
    /// under argmax quantization after training.
    pub final_perplexity: f64,
    pub codes_reset: usize,
}

/// Trains `model` in place on `clips`. Each crop is conditioned on one
/// entry of its category's list in `conditions`, drawn uniformly when the
/// list has more than one.
pub fn train_vqvae(
    model: &mut VqvaeModel,
    config: &TrainConfig,
    clips: &[&Motion],
    conditions: &BTreeMap<String, Vec<Condition>>,
) -> Result<TrainReport> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("training clips"));
    }
    for c in clips {
        match conditions.get(c.category()) {
            None => return Err(Error::UnknownCategory(c.category().into())),
            Some(pool) if pool.is_empty() => return Err(Error::Empty("training conditions")),
            Some(_) => {}
        }
        if c.len() < config.crop_len {
            return Err(Error::invalid(format!(
                "clip of {} frames is shorter than the crop length {}",
                c.len(),
                config.crop_len
            )));
        }
        if c.skeleton().feature_width() != model.config.feature_dim {
            return Err(Error::shape("train_vqvae", "clip feature width differs from the model"));
        }
    }
    let joints = clips[0].skeleton().len();
    let features: Vec<Tensor> = clips.iter().map(|c| c.to_features()).collect();
    let seeds = SeedStream::new(config.seed);
    let mut sampler = CropSampler::new(
        clips.iter().map(|c| c.len()).collect(),
        config.crop_len,
        config.crops_per_sequence,
        seeds.rng("vqvae.crops"),
    )?;
    let mut quant_rng = seeds.rng("vqvae.quantizer");
    let mut reset_rng = seeds.rng("vqvae.reset");
    let mut init_rng = seeds.rng("vqvae.codebook-init");
    let mut condition_rng = seeds.rng("vqvae.conditions");
    let mut optimizer = AdamW::with_lr(config.learning_rate, config.weight_decay)?;
    let code_dim = model.config.code_dim;
    let (b, t) = (config.batch_size, config.crop_len);
    model.window = Some(t);

    let mut log = Vec::with_capacity(config.iterations);
    let mut codes_reset = 0;
    for it in 0..config.iterations {
        let crops = sampler.batch(b);
        let batch_conditions: Vec<Condition> = crops
            .iter()
            .map(|&(seq, _)| {
                let pool = &conditions[clips[seq].category()];
                let pick = if pool.len() > 1 { uniform_index(&mut condition_rng, pool.len()) } else { 0 };
                pool[pick].clone()
            })
            .collect();
        let mut g = Graph::new();
        let target = stack_crops(&features, &crops, t)?;
        let input = g.constant(model.encoder_input(&target)?);
        let x = g.constant(target);
        let f = model.encode_graph(&mut g, input)?;
        let len = g.shape(f)[1];
        let flat = g.value(f).clone().reshape(&[b * len, code_dim])?;
        if it == 0 {
            model.codebook = Codebook::from_latents(&flat, model.config.codebook_size, &mut init_rng)?;
        }
        let q = model.quantize(&flat, config.mode, Some(&mut quant_rng))?;
        let table = g.constant(model.codebook.codes().clone());
        let picked = g.gather_rows(table, &q.indices)?;
        let codes = g.reshape(picked, &[b, len, code_dim])?;
        let passthrough = g.straight_through(f, codes)?;
        let (habit, text) = model.condition_vars(&mut g, &batch_conditions)?;
        let rec = model.decode_graph(&mut g, passthrough, habit, text, t)?;
        let loss = vq_loss(&mut g, x, rec, f, codes, joints, config.alpha, config.beta)?;
        g.backward(loss.total, &mut model.store)?;
        optimizer.lr = config.learning_rate_at(it);
        optimizer.step(&mut model.store)?;
        model.codebook.ema_update(&flat, &q.indices, config.ema_decay)?;
        codes_reset += model.codebook.reset_stale(&flat, config.reset_age, &mut reset_rng)?;

        let row = LogRow {
            iteration: it + 1,
            total: g.value(loss.total).item(),
            reconstruction: g.value(loss.reconstruction).item(),
            embedding: g.value(loss.embedding).item(),
            commitment: g.value(loss.commitment).item(),
            perplexity: perplexity(&q.indices, model.config.codebook_size),
        };
        if it % 500 == 0 {
            log::info!(
                "vqvae iteration {}: loss {:.5} perplexity {:.2}",
                row.iteration,
                row.total,
                row.perplexity
            );
        }
        log.push(row);
    }

    let mut all = Vec::new();
    for f in &features {
        all.extend(model.code_indices(f)?);
    }
    Ok(TrainReport {
        log,
        final_perplexity: perplexity(&all, model.config.codebook_size),
        codes_reset,
    })
}
