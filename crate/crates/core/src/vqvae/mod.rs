//! Motion VQ-VAE: convolutional encoder and decoder, temperature-softmax
//! quantizer, EMA codebook with stale-code reset, and the training loop.

mod codebook;
mod loss;
mod model;
mod train;

pub use codebook::{perplexity, Codebook, QuantizerMode, Quantized, EMA_EPSILON};
pub use loss::{vq_loss, VqLoss, SMOOTH_L1_THRESHOLD};
pub use model::{Condition, VqvaeConfig, VqvaeModel};
pub use train::{train_vqvae, LogRow, TrainConfig, TrainReport};
