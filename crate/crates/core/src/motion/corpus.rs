use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::clip::Motion;
use super::skeleton::Skeleton;
use super::synth::{category_params, synth_generate};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub split: Split,
    pub motion: Motion,
}

/// Labelled motion clips with a train/validation split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    clips: Vec<Clip>,
}

/// Recipe for a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub categories: Vec<String>,
    pub sequences_per_category: usize,
    pub frames: usize,
    pub fps: f64,
    /// Share of each category's sequences held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub const THREE_CATEGORIES: [&'static str; 3] = ["horse", "cat", "cow"];

    /// Three categories, 20 sequences of 40 frames each.
    pub fn three_category(seed: u64) -> Self {
        Self {
            categories: Self::THREE_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            sequences_per_category: 20,
            frames: 40,
            fps: 30.0,
            validation_fraction: 0.25,
            seed,
        }
    }

    /// Every shipped category.
    pub fn all_categories(seed: u64) -> Self {
        Self {
            categories: super::synth::category_labels().into_iter().map(String::from).collect(),
            ..Self::three_category(seed)
        }
    }
}

impl Corpus {
    pub fn new(clips: Vec<Clip>) -> Result<Self> {
        let mut seen = alloc::collections::BTreeSet::new();
        for c in &clips {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("duplicate clip id {}", c.id)));
            }
        }
        Ok(Self { clips })
    }

    pub fn synthesize(spec: &CorpusSpec) -> Result<Self> {
        if spec.categories.is_empty() || spec.sequences_per_category == 0 {
            return Err(Error::Empty("corpus spec"));
        }
        if !(0.0..1.0).contains(&spec.validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        let skeleton = Skeleton::quadruped();
        let seeds = SeedStream::new(spec.seed);
        let n = spec.sequences_per_category;
        let held_out = ((n as f64) * spec.validation_fraction).round() as usize;
        let mut clips = Vec::with_capacity(spec.categories.len() * n);
        for label in &spec.categories {
            let params = category_params(label)?;
            let stream = seeds.child(label);
            for i in 0..n {
                let seed = stream.child(&format!("{i}")).seed();
                let motion = synth_generate(&params, &skeleton, spec.frames, spec.fps, seed)?;
                let split = if i >= n - held_out { Split::Validation } else { Split::Train };
                clips.push(Clip {
                    id: format!("{label}_{i:03}"),
                    split,
                    motion,
                });
            }
        }
        Corpus::new(clips)
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Sorted, de-duplicated category labels.
    pub fn categories(&self) -> Vec<String> {
        let mut set: Vec<String> = self.clips.iter().map(|c| c.motion.category().to_string()).collect();
        set.sort();
        set.dedup();
        set
    }

    pub fn split(&self, split: Split) -> Vec<&Motion> {
        self.clips.iter().filter(|c| c.split == split).map(|c| &c.motion).collect()
    }

    /// Motions of one split grouped by category.
    pub fn by_category(&self, split: Split) -> BTreeMap<String, Vec<&Motion>> {
        let mut out: BTreeMap<String, Vec<&Motion>> = BTreeMap::new();
        for c in self.clips.iter().filter(|c| c.split == split) {
            out.entry(c.motion.category().to_string()).or_default().push(&c.motion);
        }
        out
    }
}
