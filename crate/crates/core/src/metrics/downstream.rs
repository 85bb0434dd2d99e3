use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::distance::fid;
use super::extractor::FeatureExtractor;
use crate::error::{Error, Result};
use crate::motion::Motion;
use crate::transfer::TransferRequest;

/// Smallest category size that may serve as a transfer target.
pub const DOWNSTREAM_MIN_SAMPLES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamReport {
    /// FID of transferred motions against real motions, per target.
    pub per_target: BTreeMap<String, f64>,
    /// Unweighted mean over targets.
    pub mean: f64,
    pub transfers: usize,
    pub failures: usize,
}

/// Runs `requests` through `run`, groups the outputs by target and scores
/// each group by FID against the `real` motions of that category.
pub fn downstream_score(
    requests: &[TransferRequest],
    real: &[&Motion],
    extractor: &FeatureExtractor,
    mut run: impl FnMut(&TransferRequest) -> Result<Motion>,
) -> Result<DownstreamReport> {
    if requests.is_empty() {
        return Err(Error::Empty("eligible target categories"));
    }
    let mut generated = Vec::with_capacity(requests.len());
    let mut failures = 0;
    for r in requests {
        match run(r) {
            Ok(m) => generated.push(m.with_category(r.target.as_str())),
            Err(e) => {
                log::warn!("downstream transfer {} -> {} failed: {e}", r.source_id, r.target);
                failures += 1;
            }
        }
    }
    let refs: Vec<&Motion> = generated.iter().collect();
    let mut report = score_by_target(&refs, real, extractor)?;
    report.failures = failures;
    Ok(report)
}

/// Scores already transferred motions, grouped by their category label,
/// against the `real` motions of the same category.
pub fn score_by_target(generated: &[&Motion], real: &[&Motion], extractor: &FeatureExtractor) -> Result<DownstreamReport> {
    let mut groups: BTreeMap<&str, Vec<&Motion>> = BTreeMap::new();
    for m in generated {
        groups.entry(m.category()).or_default().push(*m);
    }
    let mut per_target = BTreeMap::new();
    let mut transfers = 0;
    for (target, motions) in &groups {
        let reference: Vec<&Motion> = real.iter().copied().filter(|m| m.category() == *target).collect();
        if reference.len() < 2 || motions.len() < 2 {
            log::warn!("downstream skips {target}: fewer than 2 motions on a side");
            continue;
        }
        let score = fid(&extractor.features(motions)?, &extractor.features(&reference)?)?;
        per_target.insert(String::from(*target), score);
        transfers += motions.len();
    }
    if per_target.is_empty() {
        return Err(Error::Empty("scored target categories"));
    }
    let mean = per_target.values().sum::<f64>() / per_target.len() as f64;
    Ok(DownstreamReport {
        per_target,
        mean,
        transfers,
        failures: 0,
    })
}
