use alloc::vec::Vec;

use super::clip::Motion;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{self, Rng};

/// Fixed-length random crops over a set of sequences. Each pass draws
/// `per_sequence` random starts from every sequence (with replacement) and
/// shuffles them; batches are consumed from the pass in order.
#[derive(Clone, Debug)]
pub struct CropSampler {
    lengths: Vec<usize>,
    crop_len: usize,
    per_sequence: usize,
    queue: Vec<(usize, usize)>,
    rng: Rng,
}

impl CropSampler {
    pub fn new(lengths: Vec<usize>, crop_len: usize, per_sequence: usize, rng: Rng) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Empty("crop sequences"));
        }
        if crop_len == 0 || per_sequence == 0 {
            return Err(Error::invalid("crop length and crops per sequence must be positive"));
        }
        if let Some(short) = lengths.iter().find(|&&l| l < crop_len) {
            return Err(Error::invalid(alloc::format!(
                "sequence of {short} frames is shorter than the crop length {crop_len}"
            )));
        }
        Ok(Self {
            lengths,
            crop_len,
            per_sequence,
            queue: Vec::new(),
            rng,
        })
    }

    pub fn crop_len(&self) -> usize {
        self.crop_len
    }

    fn refill(&mut self) {
        let mut pass = Vec::with_capacity(self.lengths.len() * self.per_sequence);
        for (i, &len) in self.lengths.iter().enumerate() {
            for _ in 0..self.per_sequence {
                pass.push((i, rng::uniform_index(&mut self.rng, len - self.crop_len + 1)));
            }
        }
        rng::shuffle(&mut self.rng, &mut pass);
        // consumed from the back
        pass.reverse();
        pass.append(&mut self.queue);
        self.queue = pass;
    }

    /// Next `size` `(sequence, start)` pairs.
    pub fn batch(&mut self, size: usize) -> Vec<(usize, usize)> {
        while self.queue.len() < size {
            self.refill();
        }
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            out.push(self.queue.pop().expect("queue refilled above"));
        }
        out
    }
}

/// Stacks `[crop_len, F]` windows of `features` into a `[B, crop_len, F]`
/// tensor.
pub fn stack_crops(features: &[Tensor], crops: &[(usize, usize)], crop_len: usize) -> Result<Tensor> {
    let width = features.first().ok_or(Error::Empty("crop features"))?.last_dim();
    let mut data = Vec::with_capacity(crops.len() * crop_len * width);
    for &(seq, start) in crops {
        let f = features
            .get(seq)
            .ok_or_else(|| Error::invalid(alloc::format!("crop refers to missing sequence {seq}")))?;
        if f.last_dim() != width || start + crop_len > f.rows() {
            return Err(Error::shape("stack_crops", "crop outside its sequence or width mismatch"));
        }
        data.extend_from_slice(&f.data()[start * width..(start + crop_len) * width]);
    }
    Tensor::new(alloc::vec![crops.len(), crop_len, width], data)
}

/// Feature tensors of `clips`.
pub fn clip_features(clips: &[&Motion]) -> Vec<Tensor> {
    clips.iter().map(|c| c.to_features()).collect()
}
