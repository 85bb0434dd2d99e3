//! Seed expansion. Every random stream is derived from the global seed plus a
//! stream label, so adding a new consumer never shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A global seed that hands out independent, labelled ChaCha streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `label`: same key, ChaCha stream id taken from the label hash.
    pub fn rng(&self, label: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(label_hash(label));
        rng
    }

    /// A child seed, for handing a sub-component its own `SeedStream`.
    pub fn child(&self, label: &str) -> SeedStream {
        SeedStream {
            seed: self.seed ^ label_hash(label).rotate_left(17),
        }
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.random::<f64>()
}

pub fn uniform_index(rng: &mut Rng, n: usize) -> usize {
    use rand::Rng as _;
    rng.random_range(0..n)
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}
