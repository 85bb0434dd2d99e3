use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::Tensor;
use crate::rng::{self, Rng};

/// Floor on EMA cluster sizes when dividing out code values.
pub const EMA_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Draw the code index from the softmax distribution.
    Sample,
    /// Take the most probable (nearest) code; ties go to the lowest index.
    Argmax,
}

/// `K × d` code matrix with EMA statistics and per-code age counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    codes: Tensor,
    cluster_size: Vec<f64>,
    embed_sum: Tensor,
    age: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// Chosen code row per latent vector.
    pub indices: Vec<usize>,
    /// Row-major `[n, K]` code probabilities.
    pub probabilities: Vec<f64>,
    /// `[n, d]` selected codes.
    pub codes: Tensor,
}

impl Codebook {
    /// Codebook with the given codes and warm statistics (cluster size 1, sums
    /// equal to the codes).
    pub fn from_codes(codes: Tensor) -> Result<Self> {
        if codes.shape().len() != 2 || codes.shape()[0] == 0 || codes.shape()[1] == 0 {
            return Err(Error::shape("codebook", format!("codes must be [K, d], got {:?}", codes.shape())));
        }
        if !codes.is_finite() {
            return Err(Error::NonFinite { op: "codebook".into() });
        }
        let k = codes.shape()[0];
        Ok(Self {
            embed_sum: codes.clone(),
            cluster_size: vec![1.0; k],
            age: vec![0; k],
            codes,
        })
    }

    /// Restores a codebook from its saved parts.
    pub fn from_parts(codes: Tensor, cluster_size: Vec<f64>, embed_sum: Tensor, age: Vec<u64>) -> Result<Self> {
        let mut cb = Self::from_codes(codes)?;
        if cluster_size.len() != cb.size() || age.len() != cb.size() || embed_sum.shape() != cb.codes.shape() {
            return Err(Error::shape("codebook", "statistics do not match the code matrix"));
        }
        cb.cluster_size = cluster_size;
        cb.embed_sum = embed_sum;
        cb.age = age;
        Ok(cb)
    }

    /// `size` codes drawn uniformly (with replacement) from the rows of `latents`.
    pub fn from_latents(latents: &Tensor, size: usize, rng: &mut Rng) -> Result<Self> {
        if latents.shape().len() != 2 || latents.rows() == 0 {
            return Err(Error::Empty("latents for codebook initialisation"));
        }
        let d = latents.last_dim();
        let mut data = Vec::with_capacity(size * d);
        for _ in 0..size {
            data.extend_from_slice(latents.row(rng::uniform_index(rng, latents.rows())));
        }
        Self::from_codes(Tensor::matrix(size, d, data))
    }

    pub fn size(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn cluster_size(&self) -> &[f64] {
        &self.cluster_size
    }

    pub fn embed_sum(&self) -> &Tensor {
        &self.embed_sum
    }

    pub fn age(&self) -> &[u64] {
        &self.age
    }

    /// Squared distances `[n, K]` from each latent row to each code.
    pub fn distances(&self, latents: &Tensor) -> Result<Vec<f64>> {
        if latents.shape().len() != 2 || latents.last_dim() != self.dim() {
            return Err(Error::shape(
                "quantize",
                format!("latents {:?} vs code dim {}", latents.shape(), self.dim()),
            ));
        }
        let k = self.size();
        let mut out = Vec::with_capacity(latents.rows() * k);
        for i in 0..latents.rows() {
            let f = latents.row(i);
            for c in 0..k {
                out.push(math::squared_distance(f, self.codes.row(c)));
            }
        }
        Ok(out)
    }

    /// Temperature-softmax quantization of `[n, d]` latents.
    /// `rng` is required in [`QuantizerMode::Sample`].
    pub fn quantize(&self, latents: &Tensor, temperature: f64, mode: QuantizerMode, rng: Option<&mut Rng>) -> Result<Quantized> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        let distances = self.distances(latents)?;
        let k = self.size();
        let n = latents.rows();
        let mut probabilities = Vec::with_capacity(n * k);
        let mut indices = Vec::with_capacity(n);
        let mut rng = rng;
        for row in distances.chunks(k) {
            let nearest = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, d)| if *d < row[best] { i } else { best });
            let min = row[nearest];
            let weights: Vec<f64> = row.iter().map(|d| math::exp(-(d - min) / temperature)).collect();
            let total: f64 = weights.iter().sum();
            let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let index = match mode {
                QuantizerMode::Argmax => nearest,
                QuantizerMode::Sample => {
                    let r = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::invalid("sampling quantizer needs a random generator"))?;
                    let u = rng::uniform(r);
                    let mut acc = 0.0;
                    let mut pick = nearest;
                    for (i, pi) in p.iter().enumerate() {
                        acc += pi;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            indices.push(index);
            probabilities.extend_from_slice(&p);
        }
        let d = self.dim();
        let mut codes = Vec::with_capacity(n * d);
        for &i in &indices {
            codes.extend_from_slice(self.codes.row(i));
        }
        Ok(Quantized {
            indices,
            probabilities,
            codes: Tensor::matrix(n, d, codes),
        })
    }

    /// Exponential-moving-average update from a batch of `[n, d]` latents and
    /// their assigned code indices.
    pub fn ema_update(&mut self, latents: &Tensor, assignments: &[usize], decay: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::invalid(format!("EMA decay must lie in [0, 1], got {decay}")));
        }
        let (k, d) = (self.size(), self.dim());
        if latents.shape() != [assignments.len(), d] || assignments.iter().any(|&i| i >= k) {
            return Err(Error::shape("ema_update", "latents and assignments disagree"));
        }
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * d];
        for (row, &c) in assignments.iter().enumerate() {
            counts[c] += 1.0;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(latents.row(row)) {
                *s += v;
            }
        }
        if decay == 1.0 {
            // fixed point: statistics and codes stay as they are
            self.bump_ages(&counts);
            return Ok(());
        }
        let keep = 1.0 - decay;
        for c in 0..k {
            self.cluster_size[c] = decay * self.cluster_size[c] + keep * counts[c];
        }
        for (e, s) in self.embed_sum.data_mut().iter_mut().zip(&sums) {
            *e = decay * *e + keep * s;
        }
        let codes = self.codes.data_mut();
        for c in 0..k {
            let denom = self.cluster_size[c].max(EMA_EPSILON);
            for j in 0..d {
                codes[c * d + j] = self.embed_sum.data()[c * d + j] / denom;
            }
        }
        self.bump_ages(&counts);
        Ok(())
    }

    fn bump_ages(&mut self, counts: &[f64]) {
        for (a, &n) in self.age.iter_mut().zip(counts) {
            *a = if n > 0.0 { 0 } else { *a + 1 };
        }
    }

    /// Replaces every code whose age reached `age_threshold` by a random row of
    /// `latents`. Returns the number of codes replaced.
    pub fn reset_stale(&mut self, latents: &Tensor, age_threshold: u64, rng: &mut Rng) -> Result<usize> {
        if latents.shape().len() != 2 || latents.rows() == 0 {
            return Err(Error::Empty("latents for code reset"));
        }
        if latents.last_dim() != self.dim() {
            return Err(Error::shape("code_reset", "latent width differs from code width"));
        }
        let d = self.dim();
        let mut replaced = 0;
        for c in 0..self.size() {
            if self.age[c] < age_threshold {
                continue;
            }
            let row = latents.row(rng::uniform_index(rng, latents.rows())).to_vec();
            self.codes.data_mut()[c * d..(c + 1) * d].copy_from_slice(&row);
            self.embed_sum.data_mut()[c * d..(c + 1) * d].copy_from_slice(&row);
            self.cluster_size[c] = 1.0;
            self.age[c] = 0;
            replaced += 1;
        }
        Ok(replaced)
    }
}

/// `exp(entropy)` of the empirical code-usage distribution.
pub fn perplexity(indices: &[usize], codebook_size: usize) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; codebook_size];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * math::ln(p)
        })
        .sum();
    math::exp(entropy)
}
