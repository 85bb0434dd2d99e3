//! Run configuration: a TOML document layered over built-in profiles.
//!
//! Precedence is command-line flag, then config file, then built-in
//! defaults. The built-in profile comes from `HABITMOTION_PROFILE` when set,
//! `desk` otherwise.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use habitmotion_core::habit::HabitConfig;
use habitmotion_core::metrics::{ExtractorConfig, DIVERSITY_PAIRS, DOWNSTREAM_MIN_SAMPLES};
use habitmotion_core::motion::Skeleton;
use habitmotion_core::retrieval::PROJECTED_DIM;
use habitmotion_core::rng::SeedStream;
use habitmotion_core::vqvae::{QuantizerMode, TrainConfig, VqvaeConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, CoreContext, Result};

/// Default count of stochastic habit latents per category in VQ-VAE training;
/// zero trains on the deterministic latent alone.
pub const HABIT_DRAWS: usize = 0;

pub const PROFILE_ENV: &str = "HABITMOTION_PROFILE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Reference hyperparameters.
    Paper,
    /// Small models that train on a CPU in minutes.
    Desk,
}

impl FromStr for Profile {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(AppError::Config(format!("unknown profile {other:?}; expected paper or desk"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// How raw category embeddings become decoder text vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextProjection {
    /// Linear remap trained with the VQ-VAE.
    Learned,
    /// Fixed seeded random map.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantizer {
    Sample,
    Argmax,
}

impl From<Quantizer> for QuantizerMode {
    fn from(q: Quantizer) -> Self {
        match q {
            Quantizer::Sample => QuantizerMode::Sample,
            Quantizer::Argmax => QuantizerMode::Argmax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Corpus directory with `train/` and `val/` motion files.
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqvaeSection {
    pub width: usize,
    pub code_dim: usize,
    pub codebook_size: usize,
    pub cond_dim: usize,
    pub text_dim: usize,
    pub text_projection: TextProjection,
    pub stages: usize,
    pub dilation: usize,
    pub temperature: f64,
    pub center_pose: bool,
    /// Stochastic habit latents per category added to the deterministic one
    /// as decoder conditions during training.
    pub habit_draws: usize,
    pub alpha: f64,
    pub beta: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub late_learning_rate: f64,
    pub weight_decay: f64,
    pub crop_len: usize,
    pub crops_per_sequence: usize,
    pub reset_age: u64,
    pub quantizer: Quantizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitSection {
    pub latent_dim: usize,
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
    pub crop_len: usize,
    pub crops_per_sequence: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub crop_len: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub eval_every: usize,
    pub max_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub diversity_pairs: usize,
    pub downstream_min_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Global seed; every component derives its own stream from it.
    pub seed: u64,
    pub paths: Paths,
    pub vqvae: VqvaeSection,
    pub habit: HabitSection,
    pub extractor: ExtractorSection,
    pub metrics: MetricsSection,
}

fn feature_dim() -> usize {
    Skeleton::quadruped().feature_width()
}

impl RunConfig {
    /// Built-in defaults for `profile`.
    pub fn defaults(profile: Profile) -> Self {
        let fd = feature_dim();
        let (model, train, habit) = match profile {
            Profile::Paper => (VqvaeConfig::paper(fd), TrainConfig::paper(0), HabitConfig::paper(fd, 0)),
            Profile::Desk => (VqvaeConfig::desk(fd), TrainConfig::desk(0), HabitConfig::desk(fd, 0)),
        };
        let ex = ExtractorConfig::desk(fd, 0);
        RunConfig {
            profile,
            seed: 0,
            paths: Paths {
                corpus: "corpus".into(),
                embeddings: "corpus/embeddings.json".into(),
                checkpoints: "checkpoints".into(),
                logs: "logs".into(),
            },
            vqvae: VqvaeSection {
                width: model.width,
                code_dim: model.code_dim,
                codebook_size: model.codebook_size,
                cond_dim: model.cond_dim,
                text_dim: PROJECTED_DIM,
                text_projection: TextProjection::Learned,
                stages: model.stages,
                dilation: model.dilation,
                temperature: model.temperature,
                center_pose: model.center_pose,
                habit_draws: HABIT_DRAWS,
                alpha: train.alpha,
                beta: train.beta,
                ema_decay: train.ema_decay,
                batch_size: train.batch_size,
                iterations: train.iterations,
                learning_rate: train.learning_rate,
                late_learning_rate: train.late_learning_rate,
                weight_decay: train.weight_decay,
                crop_len: train.crop_len,
                crops_per_sequence: train.crops_per_sequence,
                reset_age: train.reset_age,
                quantizer: match train.mode {
                    QuantizerMode::Sample => Quantizer::Sample,
                    QuantizerMode::Argmax => Quantizer::Argmax,
                },
            },
            habit: HabitSection {
                latent_dim: habit.latent_dim,
                hidden: habit.hidden,
                layers: habit.layers,
                heads: habit.heads,
                ff_dim: habit.ff_dim,
                flow_layers: habit.flow_layers,
                flow_hidden: habit.flow_hidden,
                batch_size: habit.batch_size,
                iterations: habit.iterations,
                learning_rate: habit.learning_rate,
                weight_decay: habit.weight_decay,
                crop_len: habit.crop_len,
                crops_per_sequence: habit.crops_per_sequence,
            },
            extractor: ExtractorSection {
                hidden: ex.hidden,
                layers: ex.layers,
                heads: ex.heads,
                ff_dim: ex.ff_dim,
                embed_dim: ex.embed_dim,
                batch_size: ex.batch_size,
                crop_len: ex.crop_len,
                learning_rate: ex.learning_rate,
                weight_decay: ex.weight_decay,
                patience: ex.patience,
                eval_every: ex.eval_every,
                max_iterations: ex.max_iterations,
            },
            metrics: MetricsSection {
                diversity_pairs: DIVERSITY_PAIRS,
                downstream_min_samples: DOWNSTREAM_MIN_SAMPLES,
            },
        }
    }

    /// Profile used when neither a flag nor the file names one.
    pub fn default_profile() -> Result<Profile> {
        match std::env::var(PROFILE_ENV) {
            Ok(v) if !v.is_empty() => v.parse(),
            _ => Ok(Profile::Desk),
        }
    }

    /// Parses `text`, layering it over the defaults of the selected profile.
    /// `profile` comes from the command line and wins over the document.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        let named = match user.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse()?),
            Some(other) => return Err(AppError::Config(format!("profile must be a string, got {other}"))),
            None => None,
        };
        let chosen = match profile.or(named) {
            Some(p) => p,
            None => Self::default_profile()?,
        };
        let mut merged = toml::Table::try_from(Self::defaults(chosen)).expect("defaults serialize");
        merge(&mut merged, user, "")?;
        merged.insert("profile".into(), toml::Value::String(chosen.to_string()));
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, profile)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    /// Config from `path` when given, built-in defaults otherwise.
    pub fn resolve(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p, profile),
            None => {
                let chosen = match profile {
                    Some(p) => p,
                    None => Self::default_profile()?,
                };
                let cfg = Self::defaults(chosen);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (model, train) = self.vqvae_configs(None);
        model.validate().context("vqvae")?;
        train.validate().context("vqvae")?;
        self.habit_config("validate").validate().context("habit")?;
        self.extractor_config().validate().context("extractor")?;
        if self.metrics.diversity_pairs == 0 || self.metrics.downstream_min_samples < 2 {
            return Err(AppError::Config(
                "metrics.diversity_pairs must be positive and downstream_min_samples at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn seeds(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    /// Model and training configs; `raw_text_dim` is the embedding width
    /// when the text remap is learned.
    pub fn vqvae_configs(&self, raw_text_dim: Option<usize>) -> (VqvaeConfig, TrainConfig) {
        let v = &self.vqvae;
        let model = VqvaeConfig {
            feature_dim: feature_dim(),
            width: v.width,
            code_dim: v.code_dim,
            codebook_size: v.codebook_size,
            cond_dim: v.cond_dim,
            habit_dim: self.habit.latent_dim,
            text_dim: v.text_dim,
            raw_text_dim: match v.text_projection {
                TextProjection::Learned => raw_text_dim,
                TextProjection::Random => None,
            },
            stages: v.stages,
            dilation: v.dilation,
            temperature: v.temperature,
            center_pose: v.center_pose,
        };
        let train = TrainConfig {
            alpha: v.alpha,
            beta: v.beta,
            ema_decay: v.ema_decay,
            batch_size: v.batch_size,
            iterations: v.iterations,
            learning_rate: v.learning_rate,
            late_learning_rate: v.late_learning_rate,
            weight_decay: v.weight_decay,
            crop_len: v.crop_len,
            crops_per_sequence: v.crops_per_sequence,
            reset_age: v.reset_age,
            mode: v.quantizer.into(),
            seed: self.seeds().child("vqvae.train").seed(),
        };
        (model, train)
    }

    pub fn vqvae_init_seed(&self) -> u64 {
        self.seeds().child("vqvae.model").seed()
    }

    pub fn training_conditions_seed(&self) -> u64 {
        self.seeds().child("vqvae.conditions").seed()
    }

    pub fn projection_seed(&self) -> u64 {
        self.seeds().child("text.projection").seed()
    }

    pub fn habit_config(&self, category: &str) -> HabitConfig {
        let h = &self.habit;
        HabitConfig {
            feature_dim: feature_dim(),
            latent_dim: h.latent_dim,
            hidden: h.hidden,
            layers: h.layers,
            heads: h.heads,
            ff_dim: h.ff_dim,
            flow_layers: h.flow_layers,
            flow_hidden: h.flow_hidden,
            batch_size: h.batch_size,
            iterations: h.iterations,
            learning_rate: h.learning_rate,
            weight_decay: h.weight_decay,
            crop_len: h.crop_len,
            crops_per_sequence: h.crops_per_sequence,
            seed: self.seeds().child(&format!("habit.{category}")).seed(),
        }
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        let e = &self.extractor;
        ExtractorConfig {
            feature_dim: feature_dim(),
            hidden: e.hidden,
            layers: e.layers,
            heads: e.heads,
            ff_dim: e.ff_dim,
            embed_dim: e.embed_dim,
            batch_size: e.batch_size,
            crop_len: e.crop_len,
            learning_rate: e.learning_rate,
            weight_decay: e.weight_decay,
            patience: e.patience,
            eval_every: e.eval_every,
            max_iterations: e.max_iterations,
            seed: self.seeds().child("extractor").seed(),
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.corpus, &mut self.embeddings, &mut self.checkpoints, &mut self.logs] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn vqvae_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("vqvae.hmck")
    }

    pub fn habit_checkpoint(&self, category: &str) -> PathBuf {
        self.checkpoints.join(format!("habit_{category}.hmck"))
    }

    pub fn extractor_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("extractor.hmck")
    }
}

/// Overlays `user` onto `base`, refusing keys `base` does not have.
fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(AppError::Config(format!("unknown key `{path}`"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &path)?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(AppError::Config(format!("`{path}` must be a table")));
            }
            (Some(slot), v) => {
                // Let integer literals stand in for floats.
                *slot = match (&*slot, v) {
                    (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (_, v) => v,
                };
            }
        }
    }
    Ok(())
}
