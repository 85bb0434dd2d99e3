use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::motion::{stack_crops, CropSampler, Motion};
use crate::nn::{AdamW, Checkpoint, Graph, Linear, ParamStore, SequenceEncoder, Tensor, Var};
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Width of the extracted features.
    pub embed_dim: usize,
    pub batch_size: usize,
    pub crop_len: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Training stops once validation accuracy has not improved for this
    /// many iterations.
    pub patience: usize,
    /// Validation accuracy is measured every this many iterations.
    pub eval_every: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl ExtractorConfig {
    pub fn desk(feature_dim: usize, seed: u64) -> Self {
        Self {
            feature_dim,
            hidden: 128,
            layers: 4,
            heads: 8,
            ff_dim: 256,
            embed_dim: 256,
            batch_size: 32,
            crop_len: 32,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            patience: 200,
            eval_every: 25,
            max_iterations: 3000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.hidden,
            self.layers,
            self.heads,
            self.ff_dim,
            self.embed_dim,
            self.batch_size,
            self.crop_len,
            self.patience,
            self.eval_every,
            self.max_iterations,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("extractor sizes must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid("extractor width must be divisible by the head count"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Transformer category classifier whose pooled penultimate layer serves as
/// the motion feature map.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub config: ExtractorConfig,
    /// Class labels in logit order.
    pub labels: Vec<String>,
    pub store: ParamStore,
    /// Hash of the training features.
    pub corpus_hash: String,
    encoder: SequenceEncoder,
    embed: Linear,
    classify: Linear,
}

/// One validation checkpoint of extractor training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractorLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub validation_accuracy: f64,
}

impl FeatureExtractor {
    pub fn new(config: ExtractorConfig, labels: Vec<String>) -> Result<Self> {
        config.validate()?;
        if labels.len() < 2 {
            return Err(Error::invalid("a category classifier needs at least 2 categories"));
        }
        let mut rng = SeedStream::new(config.seed).rng("extractor.init");
        let mut store = ParamStore::new();
        let encoder = SequenceEncoder::new(
            &mut store,
            "encoder",
            config.feature_dim,
            config.hidden,
            config.layers,
            config.heads,
            config.ff_dim,
            &mut rng,
        )?;
        let embed = Linear::new(&mut store, "embed", config.hidden, config.embed_dim, &mut rng)?;
        let classify = Linear::new(&mut store, "classify", config.embed_dim, labels.len(), &mut rng)?;
        Ok(Self {
            config,
            labels,
            store,
            corpus_hash: String::new(),
            encoder,
            embed,
            classify,
        })
    }

    fn embed_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.encoder.forward(g, &self.store, x)?;
        let e = self.embed.forward(g, &self.store, h)?;
        Ok(g.tanh(e))
    }

    fn check(&self, m: &Motion) -> Result<()> {
        if m.skeleton().feature_width() != self.config.feature_dim {
            return Err(Error::shape("extractor", "motion feature width differs from the extractor"));
        }
        Ok(())
    }

    /// `[n, embed_dim]` features of whole motions.
    pub fn features(&self, motions: &[&Motion]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(motions.len() * self.config.embed_dim);
        for m in motions {
            self.check(m)?;
            let f = m.to_features();
            let mut g = Graph::new();
            let x = g.constant(f.reshape(&[1, m.len(), self.config.feature_dim])?);
            let e = self.embed_graph(&mut g, x)?;
            data.extend_from_slice(g.value(e).data());
        }
        Tensor::new(alloc::vec![motions.len(), self.config.embed_dim], data)
    }

    /// Predicted label index of each motion.
    pub fn classify(&self, motions: &[&Motion]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(motions.len());
        for m in motions {
            self.check(m)?;
            let mut g = Graph::new();
            let x = g.constant(m.to_features().reshape(&[1, m.len(), self.config.feature_dim])?);
            let e = self.embed_graph(&mut g, x)?;
            let logits = self.classify.forward(&mut g, &self.store, e)?;
            let row = g.value(logits).data();
            out.push((0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b }));
        }
        Ok(out)
    }

    /// Predicted labels of each motion.
    pub fn predict(&self, motions: &[&Motion]) -> Result<Vec<&str>> {
        Ok(self.classify(motions)?.into_iter().map(|i| self.labels[i].as_str()).collect())
    }

    /// Fraction of motions whose predicted label equals their category.
    pub fn accuracy(&self, motions: &[&Motion]) -> Result<f64> {
        if motions.is_empty() {
            return Err(Error::Empty("accuracy motions"));
        }
        let predicted = self.predict(motions)?;
        let hits = predicted.iter().zip(motions).filter(|(p, m)| **p == m.category()).count();
        Ok(hits as f64 / motions.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        ck.set_text("kind", "extractor")?;
        ck.set_text("labels", &self.labels.join("\n"))?;
        ck.set_text("corpus_hash", &self.corpus_hash)?;
        ck.set_text("config.seed", &c.seed.to_string())?;
        for (name, v) in [
            ("config.feature_dim", c.feature_dim),
            ("config.hidden", c.hidden),
            ("config.layers", c.layers),
            ("config.heads", c.heads),
            ("config.ff_dim", c.ff_dim),
            ("config.embed_dim", c.embed_dim),
            ("config.batch_size", c.batch_size),
            ("config.crop_len", c.crop_len),
            ("config.patience", c.patience),
            ("config.eval_every", c.eval_every),
            ("config.max_iterations", c.max_iterations),
        ] {
            ck.set_scalar(name, v as f64)?;
        }
        ck.set_scalar("config.learning_rate", c.learning_rate)?;
        ck.set_scalar("config.weight_decay", c.weight_decay)?;
        ck.insert_params("param.", &self.store)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.text("kind")? != "extractor" {
            return Err(Error::Checkpoint("not a feature-extractor checkpoint".to_string()));
        }
        let seed = ck
            .text("config.seed")?
            .parse::<u64>()
            .map_err(|_| Error::Checkpoint("config.seed is not an integer".to_string()))?;
        let config = ExtractorConfig {
            feature_dim: ck.usize("config.feature_dim")?,
            hidden: ck.usize("config.hidden")?,
            layers: ck.usize("config.layers")?,
            heads: ck.usize("config.heads")?,
            ff_dim: ck.usize("config.ff_dim")?,
            embed_dim: ck.usize("config.embed_dim")?,
            batch_size: ck.usize("config.batch_size")?,
            crop_len: ck.usize("config.crop_len")?,
            learning_rate: ck.scalar("config.learning_rate")?,
            weight_decay: ck.scalar("config.weight_decay")?,
            patience: ck.usize("config.patience")?,
            eval_every: ck.usize("config.eval_every")?,
            max_iterations: ck.usize("config.max_iterations")?,
            seed,
        };
        let labels = ck.text("labels")?.split('\n').map(str::to_string).collect();
        let mut model = Self::new(config, labels)?;
        ck.load_params("param.", &mut model.store)?;
        model.corpus_hash = ck.text("corpus_hash")?;
        Ok(model)
    }
}

/// FNV-1a over the bit patterns of every training feature, in order.
fn corpus_hash(features: &[Tensor], labels: &[usize]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (f, l) in features.iter().zip(labels) {
        eat(&(*l as u64).to_le_bytes());
        for v in f.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Trains the category classifier on random crops of `train` until the
/// accuracy on `validation` stops improving for `patience` iterations.
pub fn train_feature_extractor(
    train: &[&Motion],
    validation: &[&Motion],
    config: &ExtractorConfig,
) -> Result<(FeatureExtractor, Vec<ExtractorLogRow>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("extractor training motions"));
    }
    let mut labels: Vec<String> = train.iter().map(|m| m.category().to_string()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::invalid("extractor training needs at least 2 categories"));
    }
    if let Some(m) = validation.iter().find(|m| !labels.iter().any(|l| l == m.category())) {
        return Err(Error::UnknownCategory(m.category().to_string()));
    }
    let mut model = FeatureExtractor::new(config.clone(), labels)?;
    for m in train.iter().chain(validation) {
        model.check(m)?;
    }
    let crop_len = train.iter().map(|m| m.len()).min().unwrap_or(0).min(config.crop_len);
    let targets: Vec<usize> = train
        .iter()
        .map(|m| model.labels.iter().position(|l| l == m.category()).expect("label collected above"))
        .collect();
    let features: Vec<Tensor> = train.iter().map(|m| m.to_features()).collect();
    model.corpus_hash = corpus_hash(&features, &targets);
    let seeds = SeedStream::new(config.seed);
    let mut sampler = CropSampler::new(train.iter().map(|m| m.len()).collect(), crop_len, 1, seeds.rng("extractor.crops"))?;
    let mut optimizer = AdamW::with_lr(config.learning_rate, config.weight_decay)?;

    let mut log = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_at = 0;
    for it in 0..config.max_iterations {
        let crops = sampler.batch(config.batch_size);
        let batch_labels: Vec<usize> = crops.iter().map(|&(s, _)| targets[s]).collect();
        let mut g = Graph::new();
        let x = g.constant(stack_crops(&features, &crops, crop_len)?);
        let e = model.embed_graph(&mut g, x)?;
        let logits = model.classify.forward(&mut g, &model.store, e)?;
        let loss = g.cross_entropy(logits, &batch_labels)?;
        g.backward(loss, &mut model.store)?;
        optimizer.step(&mut model.store)?;

        let done = it + 1;
        if done % config.eval_every == 0 || done == config.max_iterations {
            let accuracy = if validation.is_empty() { f64::NAN } else { model.accuracy(validation)? };
            log.push(ExtractorLogRow {
                iteration: done,
                loss: g.value(loss).item(),
                validation_accuracy: accuracy,
            });
            log::info!("extractor iteration {done}: loss {:.4} val acc {accuracy:.3}", g.value(loss).item());
            if accuracy > best {
                best = accuracy;
                best_at = done;
            } else if done - best_at >= config.patience {
                break;
            }
        }
    }
    Ok((model, log))
}
