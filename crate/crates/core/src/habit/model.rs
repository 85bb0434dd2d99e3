use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::flow::FlowPrior;
use crate::error::{Error, Result};
use crate::motion::{stack_crops, CropSampler, Motion};
use crate::nn::{AdamW, Checkpoint, Graph, Linear, ParamStore, SequenceEncoder, Tensor, Var};
use crate::rng::{self, Rng, SeedStream};

/// Lower bound added to the softplus standard deviation of the posterior.
pub const SIGMA_FLOOR: f64 = 0.01;

/// How a habit latent is drawn from a trained prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HabitMode {
    /// `F(0)`: the image of the base mode.
    Deterministic,
    /// `F(w)` with seeded `w ~ N(0, I)`.
    Stochastic,
}

impl HabitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HabitMode::Deterministic => "det",
            HabitMode::Stochastic => "stoch",
        }
    }
}

impl core::str::FromStr for HabitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "deterministic" => Ok(HabitMode::Deterministic),
            "stoch" | "stochastic" => Ok(HabitMode::Stochastic),
            other => Err(Error::invalid(format!("unknown habit mode {other:?}; expected det or stoch"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HabitConfig {
    /// Per-frame feature width, `7N`.
    pub feature_dim: usize,
    /// Habit latent dimension `d_z`.
    pub latent_dim: usize,
    /// Transformer width.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Frames per posterior input crop.
    pub crop_len: usize,
    pub crops_per_sequence: usize,
    pub seed: u64,
}

impl HabitConfig {
    /// Reference sizes: 4 layers of width 512 with 8 heads.
    pub fn paper(feature_dim: usize, seed: u64) -> Self {
        Self {
            feature_dim,
            latent_dim: 64,
            hidden: 512,
            layers: 4,
            heads: 8,
            ff_dim: 2048,
            flow_layers: 6,
            flow_hidden: 128,
            batch_size: 32,
            iterations: 20_000,
            learning_rate: 2e-4,
            weight_decay: 1e-4,
            crop_len: 10,
            crops_per_sequence: 10,
            seed,
        }
    }

    /// Desk-scale sizes: width 64.
    pub fn desk(feature_dim: usize, seed: u64) -> Self {
        Self {
            hidden: 64,
            ff_dim: 128,
            iterations: 300,
            learning_rate: 1e-3,
            ..Self::paper(feature_dim, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.hidden,
            self.layers,
            self.heads,
            self.ff_dim,
            self.flow_layers,
            self.flow_hidden,
            self.batch_size,
            self.iterations,
            self.crop_len,
            self.crops_per_sequence,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("habit model sizes must be positive"));
        }
        if self.latent_dim < 2 {
            return Err(Error::invalid("habit latent dimension must be at least 2"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Transformer posterior `q(z | m) = N(mu(m), sigma(m))`.
#[derive(Clone, Debug)]
pub struct HabitPosterior {
    encoder: SequenceEncoder,
    mean: Linear,
    spread: Linear,
    feature_dim: usize,
}

impl HabitPosterior {
    pub fn new(store: &mut ParamStore, name: &str, config: &HabitConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = SequenceEncoder::new(
            store,
            &format!("{name}.encoder"),
            config.feature_dim,
            config.hidden,
            config.layers,
            config.heads,
            config.ff_dim,
            rng,
        )?;
        Ok(Self {
            encoder,
            mean: Linear::new(store, &format!("{name}.mean"), config.hidden, config.latent_dim, rng)?,
            spread: Linear::new(store, &format!("{name}.spread"), config.hidden, config.latent_dim, rng)?,
            feature_dim: config.feature_dim,
        })
    }

    /// `[B, T, 7N] -> (mu, sigma)`, each `[B, d_z]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        if g.shape(x).len() != 3 || g.value(x).last_dim() != self.feature_dim {
            return Err(Error::shape(
                "posterior_encode",
                format!("expected [batch, time, {}], got {:?}", self.feature_dim, g.shape(x)),
            ));
        }
        let h = self.encoder.forward(g, store, x)?;
        let mu = self.mean.forward(g, store, h)?;
        let raw = self.spread.forward(g, store, h)?;
        let sigma = g.softplus(raw);
        let sigma = g.add_scalar(sigma, SIGMA_FLOOR);
        Ok((mu, sigma))
    }
}

/// Reparameterized draw `mu + sigma * eps` with `eps` from `rng`.
pub fn sample_posterior(g: &mut Graph, mu: Var, sigma: Var, rng: &mut Rng) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    let n = shape.iter().product();
    let eps = Tensor::new(shape, (0..n).map(|_| rng::standard_normal(rng)).collect())?;
    let eps = g.constant(eps);
    let noise = g.mul(sigma, eps)?;
    g.add(mu, noise)
}

/// One row of the habit training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HabitLogRow {
    pub iteration: usize,
    pub nll: f64,
}

/// Posterior and flow prior of one category.
#[derive(Clone, Debug)]
pub struct HabitModel {
    pub category: String,
    pub config: HabitConfig,
    pub store: ParamStore,
    pub posterior: HabitPosterior,
    pub flow: FlowPrior,
    /// Training iterations run so far.
    pub iterations: usize,
    /// Batch NLL of the last training iteration.
    pub final_nll: f64,
}

impl HabitModel {
    /// Untrained model; its flow is the identity.
    pub fn new(category: &str, config: HabitConfig) -> Result<Self> {
        config.validate()?;
        if category.is_empty() {
            return Err(Error::invalid("habit model needs a category label"));
        }
        let seeds = SeedStream::new(config.seed);
        let mut store = ParamStore::new();
        let posterior = HabitPosterior::new(&mut store, "posterior", &config, &mut seeds.rng("habit.posterior.init"))?;
        let flow = FlowPrior::new(
            &mut store,
            "flow",
            config.latent_dim,
            config.flow_layers,
            config.flow_hidden,
            &mut seeds.rng("habit.flow.init"),
        )?;
        Ok(Self {
            category: category.to_string(),
            config,
            store,
            posterior,
            flow,
            iterations: 0,
            final_nll: f64::NAN,
        })
    }

    /// Posterior statistics of one `[T, 7N]` sequence.
    pub fn posterior_encode(&self, features: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if features.shape().len() != 2 {
            return Err(Error::shape("posterior_encode", "expected [frames, features]"));
        }
        let mut g = Graph::new();
        let x = g.constant(features.clone().reshape(&[1, features.rows(), features.last_dim()])?);
        let (mu, sigma) = self.posterior.forward(&mut g, &self.store, x)?;
        Ok((g.value(mu).data().to_vec(), g.value(sigma).data().to_vec()))
    }

    /// Per-row `log p(z)` under the flow prior.
    pub fn log_prob(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.flow.log_prob(&self.store, z)
    }

    /// Mean NLL of the rows of `z`.
    pub fn prior_loss(&self, z: &Tensor) -> Result<f64> {
        self.flow.prior_loss(&self.store, z)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        ck.set_text("kind", "habit")?;
        ck.set_text("category", &self.category)?;
        for (name, v) in [
            ("config.feature_dim", c.feature_dim),
            ("config.latent_dim", c.latent_dim),
            ("config.hidden", c.hidden),
            ("config.layers", c.layers),
            ("config.heads", c.heads),
            ("config.ff_dim", c.ff_dim),
            ("config.flow_layers", c.flow_layers),
            ("config.flow_hidden", c.flow_hidden),
            ("config.batch_size", c.batch_size),
            ("config.iterations", c.iterations),
            ("config.crop_len", c.crop_len),
            ("config.crops_per_sequence", c.crops_per_sequence),
            ("meta.iterations", self.iterations),
        ] {
            ck.set_scalar(name, v as f64)?;
        }
        ck.set_scalar("config.learning_rate", c.learning_rate)?;
        ck.set_scalar("config.weight_decay", c.weight_decay)?;
        ck.set_text("config.seed", &c.seed.to_string())?;
        ck.set_scalar("meta.final_nll", self.final_nll)?;
        ck.insert_params("param.", &self.store)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.text("kind")? != "habit" {
            return Err(Error::Checkpoint("not a habit checkpoint".to_string()));
        }
        let seed = ck
            .text("config.seed")?
            .parse::<u64>()
            .map_err(|_| Error::Checkpoint("config.seed is not an integer".to_string()))?;
        let config = HabitConfig {
            feature_dim: ck.usize("config.feature_dim")?,
            latent_dim: ck.usize("config.latent_dim")?,
            hidden: ck.usize("config.hidden")?,
            layers: ck.usize("config.layers")?,
            heads: ck.usize("config.heads")?,
            ff_dim: ck.usize("config.ff_dim")?,
            flow_layers: ck.usize("config.flow_layers")?,
            flow_hidden: ck.usize("config.flow_hidden")?,
            batch_size: ck.usize("config.batch_size")?,
            iterations: ck.usize("config.iterations")?,
            learning_rate: ck.scalar("config.learning_rate")?,
            weight_decay: ck.scalar("config.weight_decay")?,
            crop_len: ck.usize("config.crop_len")?,
            crops_per_sequence: ck.usize("config.crops_per_sequence")?,
            seed,
        };
        let mut model = Self::new(&ck.text("category")?, config)?;
        ck.load_params("param.", &mut model.store)?;
        model.iterations = ck.usize("meta.iterations")?;
        model.final_nll = ck.scalar("meta.final_nll")?;
        Ok(model)
    }
}

/// Trains the posterior and flow of `category` jointly on the prior NLL of
/// reparameterized posterior samples.
pub fn train_habit(category: &str, clips: &[&Motion], config: &HabitConfig) -> Result<(HabitModel, Vec<HabitLogRow>)> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("habit training clips"));
    }
    for c in clips {
        if c.category() != category {
            return Err(Error::invalid(format!(
                "habit model for {category:?} given a clip of category {:?}",
                c.category()
            )));
        }
        if c.skeleton().feature_width() != config.feature_dim {
            return Err(Error::shape("train_habit", "clip feature width differs from the config"));
        }
    }
    let mut model = HabitModel::new(category, config.clone())?;
    let seeds = SeedStream::new(config.seed);
    let features: Vec<Tensor> = clips.iter().map(|c| c.to_features()).collect();
    let mut sampler = CropSampler::new(
        clips.iter().map(|c| c.len()).collect(),
        config.crop_len,
        config.crops_per_sequence,
        seeds.rng("habit.crops"),
    )?;
    let mut noise = seeds.rng("habit.reparam");
    let mut optimizer = AdamW::with_lr(config.learning_rate, config.weight_decay)?;
    let mut log = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let crops = sampler.batch(config.batch_size);
        let mut g = Graph::new();
        let x = g.constant(stack_crops(&features, &crops, config.crop_len)?);
        let (mu, sigma) = model.posterior.forward(&mut g, &model.store, x)?;
        let z = sample_posterior(&mut g, mu, sigma, &mut noise)?;
        let loss = model.flow.nll_graph(&mut g, &model.store, z)?;
        g.backward(loss, &mut model.store)?;
        optimizer.step(&mut model.store)?;
        let nll = g.value(loss).item();
        if it % 100 == 0 {
            log::info!("habit {category} iteration {}: nll {nll:.4}", it + 1);
        }
        log.push(HabitLogRow { iteration: it + 1, nll });
    }
    model.iterations = config.iterations;
    model.final_nll = log.last().map_or(f64::NAN, |r| r.nll);
    Ok((model, log))
}

/// Habit latent `z_c` of a trained model.
pub fn sample_habit(model: &HabitModel, mode: HabitMode, seed: u64) -> Result<Vec<f64>> {
    let d = model.config.latent_dim;
    let w = match mode {
        HabitMode::Deterministic => Tensor::zeros(&[1, d]),
        HabitMode::Stochastic => {
            let mut r = SeedStream::new(seed).rng("habit.sample");
            Tensor::new(alloc::vec![1, d], (0..d).map(|_| rng::standard_normal(&mut r)).collect())?
        }
    };
    Ok(model.flow.forward(&model.store, &w)?.0.into_data())
}
