//! Category text embeddings, their 256-wide projection, and nearest-category
//! habit retrieval for categories without a trained habit model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::habit::{sample_habit, HabitMode, HabitModel};
use crate::math;
use crate::nn::Tensor;
use crate::rng::{self, SeedStream};

/// Width of projected category vectors `g_c`.
pub const PROJECTED_DIM: usize = 256;

/// Linear map from raw embeddings to `g_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `[raw_dim, out_dim]`.
    weight: Tensor,
    bias: Vec<f64>,
}

impl Projection {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.shape().len() != 2 || weight.shape()[0] == 0 || weight.shape()[1] != bias.len() {
            return Err(Error::shape(
                "projection",
                format!("weight {:?} does not match bias of length {}", weight.shape(), bias.len()),
            ));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite { op: "projection".into() });
        }
        Ok(Self { weight, bias })
    }

    /// Seeded random map with `N(0, 1/raw_dim)` weights and zero bias.
    pub fn random(raw_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if raw_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("projection dimensions must be positive"));
        }
        let mut r = SeedStream::new(seed).rng("retrieval.projection");
        let scale = 1.0 / math::sqrt(raw_dim as f64);
        let w = (0..raw_dim * out_dim).map(|_| scale * rng::standard_normal(&mut r)).collect();
        Self::new(Tensor::matrix(raw_dim, out_dim, w), alloc::vec![0.0; out_dim])
    }

    pub fn raw_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.raw_dim() {
            return Err(Error::Embedding(format!(
                "raw vector has dimension {}, projection expects {}",
                raw.len(),
                self.raw_dim()
            )));
        }
        let out = self.out_dim();
        let mut y = self.bias.clone();
        for (i, x) in raw.iter().enumerate() {
            for (acc, w) in y.iter_mut().zip(&self.weight.data()[i * out..(i + 1) * out]) {
                *acc += x * w;
            }
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingEntry {
    pub raw: Vec<f64>,
    /// Where the vector came from, e.g. `synthetic`.
    pub source: String,
    /// Whether the category has a trained habit model.
    pub observed: bool,
    /// `g_c`, once a projection has been applied.
    pub projected: Option<Vec<f64>>,
}

/// Category label to embedding map with one shared raw dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, EmbeddingEntry>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, label: &str, raw: Vec<f64>, source: &str, observed: bool) -> Result<()> {
        if label.is_empty() {
            return Err(Error::Embedding("empty category label".into()));
        }
        if self.entries.contains_key(label) {
            return Err(Error::Embedding(format!("duplicate label \"{label}\"")));
        }
        if raw.len() != self.dim {
            return Err(Error::Embedding(format!(
                "\"{label}\" has dimension {}, store dimension is {}",
                raw.len(),
                self.dim
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!("\"{label}\" has non-finite entries")));
        }
        self.entries.insert(
            label.to_string(),
            EmbeddingEntry {
                raw,
                source: source.to_string(),
                observed,
                projected: None,
            },
        );
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&EmbeddingEntry> {
        self.entries.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets every observed flag from the set of categories with habit models.
    pub fn mark_observed<'a>(&mut self, observed: impl IntoIterator<Item = &'a str>) {
        let set: Vec<&str> = observed.into_iter().collect();
        for (label, e) in self.entries.iter_mut() {
            e.observed = set.contains(&label.as_str());
        }
    }

    /// `g_c` for a raw vector.
    pub fn project(&self, projection: &Projection, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim {
            return Err(Error::Embedding(format!(
                "raw vector has dimension {}, store dimension is {}",
                raw.len(),
                self.dim
            )));
        }
        projection.apply(raw)
    }

    /// Projects every entry.
    pub fn project_all(&mut self, projection: &Projection) -> Result<()> {
        if projection.raw_dim() != self.dim {
            return Err(Error::Embedding(format!(
                "projection takes dimension {}, store dimension is {}",
                projection.raw_dim(),
                self.dim
            )));
        }
        for e in self.entries.values_mut() {
            e.projected = Some(projection.apply(&e.raw)?);
        }
        Ok(())
    }

    fn projected(&self, label: &str) -> Result<&[f64]> {
        let e = self
            .entries
            .get(label)
            .ok_or_else(|| Error::UnknownCategory(label.to_string()))?;
        e.projected
            .as_deref()
            .ok_or_else(|| Error::Embedding(format!("\"{label}\" has not been projected")))
    }
}

/// The observed category nearest to a query vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Nearest {
    pub category: String,
    pub distance: f64,
}

/// Euclidean argmin of `query` over the projected vectors of `observed`
/// labels; ties go to the lexicographically smallest label.
pub fn nearest_observed<'a>(query: &[f64], store: &EmbeddingStore, observed: impl IntoIterator<Item = &'a str>) -> Result<Nearest> {
    let mut labels: Vec<&str> = observed.into_iter().collect();
    labels.sort_unstable();
    labels.dedup();
    let mut best: Option<Nearest> = None;
    for label in labels {
        let g = store.projected(label)?;
        if g.len() != query.len() {
            return Err(Error::Embedding(format!(
                "query has dimension {}, \"{label}\" has {}",
                query.len(),
                g.len()
            )));
        }
        let d = math::euclidean(query, g);
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(Nearest {
                category: label.to_string(),
                distance: d,
            });
        }
    }
    best.ok_or(Error::Empty("observed categories"))
}

/// Result of [`retrieve_habit`].
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub category: String,
    pub habit: Vec<f64>,
    pub distance: f64,
}

/// Habit latent of the observed category nearest to `g_c`.
pub fn retrieve_habit(
    g_c: &[f64],
    store: &EmbeddingStore,
    models: &BTreeMap<String, HabitModel>,
    mode: HabitMode,
    seed: u64,
) -> Result<Retrieved> {
    let nearest = nearest_observed(g_c, store, models.keys().map(String::as_str))?;
    let habit = sample_habit(&models[&nearest.category], mode, seed)?;
    Ok(Retrieved {
        category: nearest.category,
        habit,
        distance: nearest.distance,
    })
}

/// Where a condition's habit latent came from.
#[derive(Clone, Debug, PartialEq)]
pub enum HabitSource {
    /// The category's own model.
    Own,
    /// Borrowed from the nearest observed category.
    Retrieved { category: String, distance: f64 },
}

/// Decoder conditioning for one target label.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryCondition {
    pub habit: Vec<f64>,
    /// Projected vector `g_c`.
    pub projected: Vec<f64>,
    /// Raw embedding of the label.
    pub raw: Vec<f64>,
    pub source: HabitSource,
}

/// `(z_c, g_c)` for `label`: its own habit model when one exists, otherwise
/// retrieval by its projected embedding.
pub fn get_condition(
    label: &str,
    store: &EmbeddingStore,
    models: &BTreeMap<String, HabitModel>,
    mode: HabitMode,
    seed: u64,
) -> Result<CategoryCondition> {
    let entry = store.get(label).ok_or_else(|| Error::UnknownCategory(label.to_string()))?;
    let projected = store.projected(label)?.to_vec();
    let (habit, source) = match models.get(label) {
        Some(model) => (sample_habit(model, mode, seed)?, HabitSource::Own),
        None => {
            let r = retrieve_habit(&projected, store, models, mode, seed)?;
            (
                r.habit,
                HabitSource::Retrieved {
                    category: r.category,
                    distance: r.distance,
                },
            )
        }
    };
    Ok(CategoryCondition {
        habit,
        projected,
        raw: entry.raw.clone(),
        source,
    })
}
