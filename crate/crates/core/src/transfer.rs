//! Source motion plus target label to transferred motion.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::habit::{HabitMode, HabitModel};
use crate::motion::{features_to_motion, DecodeReport, Motion};
use crate::retrieval::{get_condition, EmbeddingStore, HabitSource, Projection};
use crate::rng::SeedStream;
use crate::vqvae::{Condition, QuantizerMode, VqvaeModel};

/// Which decoder conditioning inputs are active. A disabled input is fed as
/// zeros, both in training and at transfer time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditionMask {
    pub habit: bool,
    pub text: bool,
}

impl ConditionMask {
    pub const FULL: ConditionMask = ConditionMask { habit: true, text: true };

    pub fn apply(self, mut condition: Condition) -> Condition {
        if !self.habit {
            condition.habit.iter_mut().for_each(|v| *v = 0.0);
        }
        if !self.text {
            condition.text.iter_mut().for_each(|v| *v = 0.0);
        }
        condition
    }
}

impl Default for ConditionMask {
    fn default() -> Self {
        Self::FULL
    }
}

/// Trained models and the projected embedding store used for transfer.
#[derive(Clone, Debug)]
pub struct TransferContext {
    pub vqvae: VqvaeModel,
    pub habits: BTreeMap<String, HabitModel>,
    pub store: EmbeddingStore,
    pub projection: Projection,
    pub mask: ConditionMask,
}

impl TransferContext {
    /// Projects `store` with the VQ-VAE's learned remap, or with `fallback`
    /// when the model consumes projected vectors directly, and marks the
    /// categories with habit models as observed.
    pub fn new(
        vqvae: VqvaeModel,
        habits: BTreeMap<String, HabitModel>,
        mut store: EmbeddingStore,
        fallback: Option<Projection>,
    ) -> Result<Self> {
        let projection = match vqvae.text_remap() {
            Some((w, b)) => Projection::new(w, b.into_data())?,
            None => fallback.ok_or_else(|| {
                Error::invalid("the VQ-VAE has no learned text remap and no fallback projection was given")
            })?,
        };
        if projection.out_dim() != vqvae.config.text_dim {
            return Err(Error::Embedding(format!(
                "projection yields {} values, the decoder expects {}",
                projection.out_dim(),
                vqvae.config.text_dim
            )));
        }
        for (label, m) in &habits {
            if m.config.latent_dim != vqvae.config.habit_dim {
                return Err(Error::shape("transfer", format!("habit model {label} has the wrong latent width")));
            }
        }
        store.project_all(&projection)?;
        store.mark_observed(habits.keys().map(String::as_str));
        Ok(Self {
            vqvae,
            habits,
            store,
            projection,
            mask: ConditionMask::FULL,
        })
    }

    pub fn with_mask(mut self, mask: ConditionMask) -> Self {
        self.mask = mask;
        self
    }

    /// Decoder conditioning for `label`.
    pub fn condition(&self, label: &str, mode: HabitMode, seed: u64) -> Result<(Condition, HabitSource)> {
        let c = get_condition(label, &self.store, &self.habits, mode, seed)?;
        let text = if self.vqvae.config.raw_text_dim.is_some() { c.raw } else { c.projected };
        Ok((self.mask.apply(Condition { habit: c.habit, text }), c.source))
    }
}

/// Decoder conditioning for training. Each category gets its deterministic
/// habit latent followed by `draws` seeded stochastic ones, all with the
/// category's text vector: raw when `projection` is `None` (the model learns
/// the remap) and projected otherwise.
pub fn training_conditions(
    habits: &BTreeMap<String, HabitModel>,
    store: &EmbeddingStore,
    projection: Option<&Projection>,
    draws: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<Condition>>> {
    let seeds = SeedStream::new(seed);
    let mut out = BTreeMap::new();
    for (label, model) in habits {
        let entry = store.get(label).ok_or_else(|| Error::UnknownCategory(label.clone()))?;
        let text = match projection {
            Some(p) => store.project(p, &entry.raw)?,
            None => entry.raw.clone(),
        };
        let mut pool = Vec::with_capacity(draws + 1);
        pool.push(Condition {
            habit: crate::habit::sample_habit(model, HabitMode::Deterministic, 0)?,
            text: text.clone(),
        });
        for i in 0..draws {
            let s = seeds.child(&format!("{label}.{i}")).seed();
            pool.push(Condition {
                habit: crate::habit::sample_habit(model, HabitMode::Stochastic, s)?,
                text: text.clone(),
            });
        }
        out.insert(label.clone(), pool);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRequest {
    pub source: Motion,
    /// Identifier of the source clip, recorded in manifests.
    pub source_id: String,
    pub target: String,
    pub mode: HabitMode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutput {
    pub motion: Motion,
    pub habit_source: HabitSource,
    pub decode: DecodeReport,
}

/// Encodes the source, quantizes by argmax, decodes under the target's
/// condition window by window (see [`VqvaeModel::window_spans`]) and
/// rebuilds a valid motion whose velocities follow the decoded root path and
/// joint rotations.
pub fn transfer(request: &TransferRequest, ctx: &TransferContext) -> Result<TransferOutput> {
    let src = &request.source;
    if src.skeleton().feature_width() != ctx.vqvae.config.feature_dim {
        return Err(Error::shape("transfer", "source skeleton does not match the VQ-VAE"));
    }
    let (condition, habit_source) = ctx.condition(&request.target, request.mode, request.seed)?;
    let decoded = ctx.vqvae.reconstruct(&src.to_features(), &condition, QuantizerMode::Argmax, None)?;
    let (raw, decode) = features_to_motion(&decoded, src.skeleton(), &request.target, src.fps())?;
    let motion = with_consistent_velocities(raw)?;
    Ok(TransferOutput {
        motion,
        habit_source,
        decode,
    })
}

/// Replaces every velocity by the frame difference of forward-kinematics
/// positions, with the root moving along its own (decoded) velocities.
pub fn with_consistent_velocities(motion: Motion) -> Result<Motion> {
    let positions = motion.positions()?;
    let rotations = motion.frames().iter().map(|f| f.rotations.clone()).collect();
    Motion::from_rotations_and_positions(
        motion.skeleton().clone(),
        motion.category(),
        motion.fps(),
        rotations,
        &positions,
    )
}

/// Manifest row of one batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub source_id: String,
    pub source_category: String,
    pub target_category: String,
    pub seed: u64,
    pub mode: HabitMode,
    /// Category whose habit model supplied the latent.
    pub habit_from: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchOutput {
    pub motions: Vec<Motion>,
    /// One row per entry of `motions`.
    pub manifest: Vec<ManifestRow>,
    /// `(request index, error)` for failed items.
    pub failures: Vec<(usize, Error)>,
}

/// Runs every request; failures are collected and the batch continues.
pub fn batch_transfer(requests: &[TransferRequest], ctx: &TransferContext) -> BatchOutput {
    let mut out = BatchOutput::default();
    for (i, r) in requests.iter().enumerate() {
        match transfer(r, ctx) {
            Ok(t) => {
                let habit_from = match t.habit_source {
                    HabitSource::Own => r.target.clone(),
                    HabitSource::Retrieved { category, .. } => category,
                };
                out.manifest.push(ManifestRow {
                    source_id: r.source_id.clone(),
                    source_category: r.source.category().to_string(),
                    target_category: r.target.clone(),
                    seed: r.seed,
                    mode: r.mode,
                    habit_from,
                });
                out.motions.push(t.motion);
            }
            Err(e) => {
                log::warn!("transfer {} -> {} failed: {e}", r.source_id, r.target);
                out.failures.push((i, e));
            }
        }
    }
    out
}

/// Categories of `sources` with at least `min_samples` motions.
pub fn eligible_targets<'a>(sources: impl IntoIterator<Item = &'a Motion>, min_samples: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in sources {
        *counts.entry(m.category()).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|(_, n)| *n >= min_samples)
        .map(|(c, _)| c.to_string())
        .collect()
}

/// Requests sending every source to every eligible target category other
/// than its own, each with a seed derived from `seed` and its position.
pub fn cross_category_requests(
    sources: &[(String, &Motion)],
    min_samples: usize,
    mode: HabitMode,
    seed: u64,
) -> Vec<TransferRequest> {
    let targets = eligible_targets(sources.iter().map(|(_, m)| *m), min_samples);
    let seeds = SeedStream::new(seed);
    let mut out = Vec::new();
    for (id, m) in sources {
        for t in &targets {
            if t == m.category() {
                continue;
            }
            out.push(TransferRequest {
                source: (*m).clone(),
                source_id: id.clone(),
                target: t.clone(),
                mode,
                seed: seeds.child(&format!("transfer.{}", out.len())).seed(),
            });
        }
    }
    out
}
