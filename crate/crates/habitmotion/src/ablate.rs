//! Ablation studies: conditioning components and the velocity weight.

use std::collections::BTreeMap;

use habitmotion_core::habit::{HabitMode, HabitModel};
use habitmotion_core::metrics::{downstream_score, mpjpe, FeatureExtractor};
use habitmotion_core::motion::{Corpus, Motion, Split};
use habitmotion_core::retrieval::EmbeddingStore;
use habitmotion_core::transfer::{cross_category_requests, transfer, ConditionMask, TransferContext, TransferRequest};

use crate::config::RunConfig;
use crate::error::{CoreContext, Result};
use crate::pipeline::{corpus_habits, fallback_projection, fit_vqvae, load_extractor, load_training_corpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    /// Habit encoder on/off by text encoder on/off.
    HabitComponents,
    /// Velocity loss weight sweep.
    Alpha,
}

pub const ALPHA_SWEEP: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub habit_encoder: bool,
    pub text_encoder: bool,
    pub alpha: f64,
    pub final_loss: f64,
    pub perplexity: f64,
    /// Mean same-category reconstruction MPJPE on the validation split.
    pub reconstruction_mpjpe: f64,
    /// Mean per-target FID of cross-category transfers.
    pub downstream: f64,
}

pub const ABLATION_HEADER: [&str; 7] = [
    "habit_encoder",
    "text_encoder",
    "alpha",
    "final_loss",
    "perplexity",
    "reconstruction_mpjpe",
    "downstream",
];

impl AblationRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.habit_encoder.to_string(),
            self.text_encoder.to_string(),
            self.alpha.to_string(),
            self.final_loss.to_string(),
            self.perplexity.to_string(),
            self.reconstruction_mpjpe.to_string(),
            self.downstream.to_string(),
        ]
    }
}

/// The variants of `study` as `(mask, alpha override)`.
pub fn variants(study: Study) -> Vec<(ConditionMask, Option<f64>)> {
    match study {
        Study::HabitComponents => [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .map(|(habit, text)| (ConditionMask { habit, text }, None))
            .collect(),
        Study::Alpha => ALPHA_SWEEP.iter().map(|&a| (ConditionMask::FULL, Some(a))).collect(),
    }
}

/// Inputs shared by every variant.
pub struct AblationInputs {
    pub corpus: Corpus,
    pub habits: BTreeMap<String, HabitModel>,
    pub store: EmbeddingStore,
    pub extractor: FeatureExtractor,
}

impl AblationInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let corpus = load_training_corpus(cfg)?;
        let habits = corpus_habits(cfg, &corpus)?;
        let store = crate::formats::load_embeddings(&cfg.paths.embeddings)?;
        let extractor = load_extractor(cfg)?;
        Ok(Self {
            corpus,
            habits,
            store,
            extractor,
        })
    }
}

/// Validation motions with their clip ids.
fn validation(corpus: &Corpus) -> Vec<(String, &Motion)> {
    corpus
        .clips()
        .iter()
        .filter(|c| c.split == Split::Validation)
        .map(|c| (c.id.clone(), &c.motion))
        .collect()
}

/// Trains one VQ-VAE per variant and scores it.
pub fn run_study(cfg: &RunConfig, study: Study, inputs: &AblationInputs) -> Result<Vec<AblationRow>> {
    let val = validation(&inputs.corpus);
    let val_refs: Vec<&Motion> = val.iter().map(|(_, m)| *m).collect();
    let requests = cross_category_requests(
        &val,
        cfg.metrics.downstream_min_samples,
        HabitMode::Deterministic,
        cfg.seeds().child("ablate.transfer").seed(),
    );
    let mut rows = Vec::new();
    for (mask, alpha) in variants(study) {
        log::info!("ablation variant habit={} text={} alpha={alpha:?}", mask.habit, mask.text);
        let (model, report) = fit_vqvae(cfg, &inputs.corpus, &inputs.habits, &inputs.store, mask, alpha)?;
        let ctx = TransferContext::new(
            model,
            inputs.habits.clone(),
            inputs.store.clone(),
            fallback_projection(cfg, &inputs.store)?,
        )
        .context("transfer context")?
        .with_mask(mask);
        let mut rec = 0.0;
        for (id, m) in &val {
            let req = TransferRequest {
                source: (*m).clone(),
                source_id: id.clone(),
                target: m.category().to_string(),
                mode: HabitMode::Deterministic,
                seed: 0,
            };
            let out = transfer(&req, &ctx).context(format!("reconstruct {id}"))?;
            rec += mpjpe(m, &out.motion).context("mpjpe")?;
        }
        let downstream = downstream_score(&requests, &val_refs, &inputs.extractor, |r| {
            transfer(r, &ctx).map(|o| o.motion)
        })
        .context("downstream")?;
        rows.push(AblationRow {
            habit_encoder: mask.habit,
            text_encoder: mask.text,
            alpha: alpha.unwrap_or(cfg.vqvae.alpha),
            final_loss: report.log.last().map(|r| r.total).unwrap_or(f64::NAN),
            perplexity: report.final_perplexity,
            reconstruction_mpjpe: rec / val.len().max(1) as f64,
            downstream: downstream.mean,
        });
    }
    Ok(rows)
}

/// Fixed-width text table of `rows`.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:>6} {:>6} {:>6} {:>12} {:>10} {:>12} {:>12}\n",
        "habit", "text", "alpha", "final_loss", "perplexity", "recon_mpjpe", "downstream"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>6} {:>6} {:>6.2} {:>12.6} {:>10.3} {:>12.6} {:>12.6}\n",
            r.habit_encoder, r.text_encoder, r.alpha, r.final_loss, r.perplexity, r.reconstruction_mpjpe, r.downstream
        ));
    }
    out
}
