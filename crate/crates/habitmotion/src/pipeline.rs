//! File-backed pipeline stages shared by the command line and the tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use habitmotion_core::habit::{train_habit, HabitModel};
use habitmotion_core::metrics::{train_feature_extractor, FeatureExtractor};
use habitmotion_core::motion::{synth, Corpus, CorpusSpec, Motion, Split};
use habitmotion_core::retrieval::{EmbeddingStore, Projection};
use habitmotion_core::transfer::{training_conditions, ConditionMask, TransferContext};
use habitmotion_core::vqvae::{train_vqvae, Condition, TrainConfig, TrainReport, VqvaeModel};
use habitmotion_core::Error as CoreError;

use crate::config::{RunConfig, TextProjection};
use crate::error::{AppError, CoreContext, Result};
use crate::formats::{
    load_checkpoint, load_corpus, load_embeddings, save_checkpoint, save_corpus, save_embeddings, write_csv,
};

/// Width of the shipped synthetic category embeddings.
pub const SYNTHETIC_EMBEDDING_DIM: usize = 64;

pub const EMBEDDINGS_FILE: &str = "embeddings.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CorpusProfile {
    /// horse, cat and cow.
    #[value(name = "3cat")]
    ThreeCategories,
    /// Every shipped category.
    #[value(name = "21cat")]
    AllCategories,
}

impl CorpusProfile {
    pub fn spec(self, seed: u64) -> CorpusSpec {
        match self {
            CorpusProfile::ThreeCategories => CorpusSpec::three_category(seed),
            CorpusProfile::AllCategories => CorpusSpec::all_categories(seed),
        }
    }
}

/// Synthetic embeddings for every shipped category; `observed` flags the
/// categories present in a corpus.
pub fn synthetic_embeddings(observed: &[String]) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(SYNTHETIC_EMBEDDING_DIM).context("embeddings")?;
    for label in synth::category_labels() {
        let v = synth::synthetic_embedding(label, SYNTHETIC_EMBEDDING_DIM).context("embeddings")?;
        let seen = observed.iter().any(|o| o == label);
        store.insert(label, v, "synthetic", seen).context("embeddings")?;
    }
    Ok(store)
}

/// Writes a synthetic corpus and its embedding file under `out`.
pub fn synthesize(profile: CorpusProfile, out: &Path, seed: u64) -> Result<Corpus> {
    let corpus = Corpus::synthesize(&profile.spec(seed)).context("synth")?;
    save_corpus(out, &corpus)?;
    save_embeddings(&out.join(EMBEDDINGS_FILE), &synthetic_embeddings(&corpus.categories())?)?;
    Ok(corpus)
}

pub fn load_training_corpus(cfg: &RunConfig) -> Result<Corpus> {
    load_corpus(&cfg.paths.corpus)
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Trains the habit model of `category`, or of every training category,
/// writing `habit_<category>.hmck` and `habit_<category>.csv`.
pub fn train_habits(cfg: &RunConfig, category: Option<&str>) -> Result<Vec<String>> {
    let corpus = load_training_corpus(cfg)?;
    let by_cat = corpus.by_category(Split::Train);
    let targets: Vec<String> = match category {
        Some(c) if by_cat.contains_key(c) => vec![c.to_string()],
        Some(c) => {
            return Err(AppError::core(
                format!("corpus {}", cfg.paths.corpus.display()),
                CoreError::UnknownCategory(c.to_string()),
            ))
        }
        None => by_cat.keys().cloned().collect(),
    };
    for c in &targets {
        log::info!("training habit model for {c}");
        let (model, log) = train_habit(c, &by_cat[c], &cfg.habit_config(c)).context(format!("habit {c}"))?;
        save_checkpoint(
            &cfg.paths.habit_checkpoint(c),
            &model.to_checkpoint().context(format!("habit {c}"))?,
        )?;
        let rows: Vec<Vec<String>> = log.iter().map(|r| vec![r.iteration.to_string(), f(r.nll)]).collect();
        write_csv(&cfg.paths.logs.join(format!("habit_{c}.csv")), &["iteration", "nll"], &rows)?;
    }
    Ok(targets)
}

pub fn load_habit(cfg: &RunConfig, category: &str) -> Result<HabitModel> {
    let path = cfg.paths.habit_checkpoint(category);
    HabitModel::from_checkpoint(&load_checkpoint(&path)?).context(path.display().to_string())
}

/// Every `habit_<category>.hmck` in the checkpoint directory.
pub fn discover_habits(cfg: &RunConfig) -> Result<BTreeMap<String, HabitModel>> {
    let dir = &cfg.paths.checkpoints;
    let mut out = BTreeMap::new();
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    names.sort();
    for path in names {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(category) = name.strip_prefix("habit_").and_then(|n| n.strip_suffix(".hmck")) {
            out.insert(category.to_string(), load_habit(cfg, category)?);
        }
    }
    Ok(out)
}

/// Habit models for the training categories of `corpus`.
pub fn corpus_habits(cfg: &RunConfig, corpus: &Corpus) -> Result<BTreeMap<String, HabitModel>> {
    let mut out = BTreeMap::new();
    for c in corpus.by_category(Split::Train).keys() {
        out.insert(c.clone(), load_habit(cfg, c)?);
    }
    Ok(out)
}

/// The fixed random text projection, when the config selects it.
pub fn fallback_projection(cfg: &RunConfig, store: &EmbeddingStore) -> Result<Option<Projection>> {
    match cfg.vqvae.text_projection {
        TextProjection::Learned => Ok(None),
        TextProjection::Random => Projection::random(store.dim(), cfg.vqvae.text_dim, cfg.projection_seed())
            .map(Some)
            .context("text projection"),
    }
}

/// VQ-VAE configs and per-category training conditions.
pub fn vqvae_inputs(
    cfg: &RunConfig,
    habits: &BTreeMap<String, HabitModel>,
    store: &EmbeddingStore,
    mask: ConditionMask,
) -> Result<(VqvaeModel, TrainConfig, BTreeMap<String, Vec<Condition>>)> {
    let projection = fallback_projection(cfg, store)?;
    let (model_cfg, train_cfg) = cfg.vqvae_configs(Some(store.dim()));
    let conditions = training_conditions(
        habits,
        store,
        projection.as_ref(),
        cfg.vqvae.habit_draws,
        cfg.training_conditions_seed(),
    )
    .context("training conditions")?
    .into_iter()
    .map(|(k, pool)| (k, pool.into_iter().map(|c| mask.apply(c)).collect()))
    .collect();
    let model = VqvaeModel::new(model_cfg, cfg.vqvae_init_seed()).context("vqvae")?;
    Ok((model, train_cfg, conditions))
}

/// Trains a VQ-VAE in memory on the training split.
pub fn fit_vqvae(
    cfg: &RunConfig,
    corpus: &Corpus,
    habits: &BTreeMap<String, HabitModel>,
    store: &EmbeddingStore,
    mask: ConditionMask,
    alpha: Option<f64>,
) -> Result<(VqvaeModel, TrainReport)> {
    let (mut model, mut train_cfg, conditions) = vqvae_inputs(cfg, habits, store, mask)?;
    if let Some(a) = alpha {
        train_cfg.alpha = a;
    }
    let report = train_vqvae(&mut model, &train_cfg, &corpus.split(Split::Train), &conditions).context("vqvae")?;
    Ok((model, report))
}

/// Trains the VQ-VAE, writing `vqvae.hmck` and `vqvae.csv`.
pub fn train_vqvae_stage(cfg: &RunConfig) -> Result<TrainReport> {
    let corpus = load_training_corpus(cfg)?;
    let store = load_embeddings(&cfg.paths.embeddings)?;
    let habits = corpus_habits(cfg, &corpus)?;
    let (model, report) = fit_vqvae(cfg, &corpus, &habits, &store, ConditionMask::FULL, None)?;
    save_checkpoint(&cfg.paths.vqvae_checkpoint(), &model.to_checkpoint().context("vqvae")?)?;
    let rows: Vec<Vec<String>> = report
        .log
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                f(r.total),
                f(r.reconstruction),
                f(r.embedding),
                f(r.commitment),
                f(r.perplexity),
            ]
        })
        .collect();
    write_csv(
        &cfg.paths.logs.join("vqvae.csv"),
        &["iteration", "total", "reconstruction", "embedding", "commitment", "perplexity"],
        &rows,
    )?;
    Ok(report)
}

/// Trains the evaluation classifier, writing `extractor.hmck` and
/// `extractor.csv`.
pub fn train_extractor_stage(cfg: &RunConfig) -> Result<FeatureExtractor> {
    let corpus = load_training_corpus(cfg)?;
    let (model, log) =
        train_feature_extractor(&corpus.split(Split::Train), &corpus.split(Split::Validation), &cfg.extractor_config())
            .context("extractor")?;
    save_checkpoint(&cfg.paths.extractor_checkpoint(), &model.to_checkpoint().context("extractor")?)?;
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|r| vec![r.iteration.to_string(), f(r.loss), f(r.validation_accuracy)])
        .collect();
    write_csv(
        &cfg.paths.logs.join("extractor.csv"),
        &["iteration", "loss", "validation_accuracy"],
        &rows,
    )?;
    Ok(model)
}

pub fn load_extractor(cfg: &RunConfig) -> Result<FeatureExtractor> {
    let path = cfg.paths.extractor_checkpoint();
    FeatureExtractor::from_checkpoint(&load_checkpoint(&path)?).context(path.display().to_string())
}

pub fn load_vqvae(cfg: &RunConfig) -> Result<VqvaeModel> {
    let path = cfg.paths.vqvae_checkpoint();
    VqvaeModel::from_checkpoint(&load_checkpoint(&path)?).context(path.display().to_string())
}

/// Transfer context from the checkpoints and embeddings named by `cfg`.
pub fn load_context(cfg: &RunConfig) -> Result<TransferContext> {
    let vqvae = load_vqvae(cfg)?;
    let habits = discover_habits(cfg)?;
    let store = load_embeddings(&cfg.paths.embeddings)?;
    let fallback = fallback_projection(cfg, &store)?;
    TransferContext::new(vqvae, habits, store, fallback).context("transfer context")
}

/// Borrowed `(id, motion)` pairs.
pub fn as_sources(motions: &[(String, Motion)]) -> Vec<(String, &Motion)> {
    motions.iter().map(|(id, m)| (id.clone(), m)).collect()
}
