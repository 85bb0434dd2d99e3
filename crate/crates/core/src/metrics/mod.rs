//! Evaluation: classifier features, FID, intra-FID, the cross-category
//! downstream score, diversity, 1-NNA and MPJPE.

mod distance;
mod downstream;
mod extractor;

pub use distance::{
    diversity, fid, intra_fid, mpjpe, mpjpe_positions, one_nna, FeatureSet, IntraFid, FID_JITTER,
};
pub use downstream::{downstream_score, score_by_target, DownstreamReport, DOWNSTREAM_MIN_SAMPLES};
pub use extractor::{train_feature_extractor, ExtractorConfig, ExtractorLogRow, FeatureExtractor};

/// Pairs drawn by the diversity metric.
pub const DIVERSITY_PAIRS: usize = 300;
