//! Metric reports over directories of real and generated motions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use habitmotion_core::metrics::{
    diversity, fid, intra_fid, mpjpe, one_nna, score_by_target, FeatureExtractor, FeatureSet,
};
use habitmotion_core::motion::Motion;
use serde::Serialize;

use crate::error::{AppError, CoreContext, Result};
use crate::formats::{load_motion, load_motion_dir, read_csv, write_csv, write_file};
use crate::manifest::MANIFEST_OUTPUT_COLUMN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Fid,
    IntraFid,
    Downstream,
    Diversity,
    OneNna,
    Mpjpe,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Fid,
        Metric::IntraFid,
        Metric::Downstream,
        Metric::Diversity,
        Metric::OneNna,
        Metric::Mpjpe,
    ];
}

impl FromStr for Metric {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fid" => Ok(Metric::Fid),
            "intra_fid" | "intra-fid" => Ok(Metric::IntraFid),
            "downstream" => Ok(Metric::Downstream),
            "diversity" => Ok(Metric::Diversity),
            "nna" | "one_nna" | "1nna" => Ok(Metric::OneNna),
            "mpjpe" => Ok(Metric::Mpjpe),
            other => Err(AppError::Config(format!(
                "unknown metric {other:?}; expected all or a list of fid, intra_fid, downstream, diversity, nna, mpjpe"
            ))),
        }
    }
}

/// `all`, or a comma-separated list of metric names.
pub fn parse_metrics(spec: &str) -> Result<BTreeSet<Metric>> {
    if spec.trim() == "all" {
        return Ok(Metric::ALL.into_iter().collect());
    }
    let set: BTreeSet<Metric> = spec.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if set.is_empty() {
        return Err(AppError::Config("no metrics selected".into()));
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntraFidReport {
    #[serde(flatten)]
    pub per_category: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Requested metrics; a metric that was not requested or could not be
/// computed is `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub fid: Option<f64>,
    pub intra_fid: Option<IntraFidReport>,
    pub downstream: Option<f64>,
    pub diversity: Option<f64>,
    pub one_nna: Option<f64>,
    pub mpjpe: Option<f64>,
    #[serde(skip)]
    pub downstream_per_target: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per category: `category, intra_fid, downstream`.
    pub fn category_rows(&self) -> Vec<Vec<String>> {
        let mut cats: BTreeSet<&str> = self.downstream_per_target.keys().map(String::as_str).collect();
        if let Some(i) = &self.intra_fid {
            cats.extend(i.per_category.keys().map(String::as_str));
        }
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        cats.into_iter()
            .map(|c| {
                vec![
                    c.to_string(),
                    cell(self.intra_fid.as_ref().and_then(|i| i.per_category.get(c))),
                    cell(self.downstream_per_target.get(c)),
                ]
            })
            .collect()
    }

    /// Writes the JSON report to `path` and the category table next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())?;
        write_csv(&path.with_extension("csv"), &["category", "intra_fid", "downstream"], &self.category_rows())
    }
}

/// Generated motions from a directory, or from the `output` column of a
/// manifest CSV (paths relative to the manifest).
pub fn load_generated(path: &Path) -> Result<Vec<(String, Motion)>> {
    if path.is_dir() {
        return load_motion_dir(path);
    }
    let (header, rows) = read_csv(path)?;
    let col = header
        .iter()
        .position(|h| h == MANIFEST_OUTPUT_COLUMN)
        .ok_or_else(|| AppError::schema(path, format!("manifest has no `{MANIFEST_OUTPUT_COLUMN}` column")))?;
    let base = path.parent().unwrap_or(Path::new(""));
    rows.iter()
        .map(|r| {
            let file = base.join(&r[col]);
            let id = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, load_motion(&file)?))
        })
        .collect()
}

fn labeled(extractor: &FeatureExtractor, motions: &[&Motion]) -> Result<FeatureSet> {
    let features = extractor.features(motions).context("features")?;
    FeatureSet::new(features, motions.iter().map(|m| m.category().to_string()).collect()).context("features")
}

/// Keeps only rows whose label is in `keep`.
fn restrict(set: &FeatureSet, keep: &BTreeSet<&str>) -> Result<FeatureSet> {
    let rows: Vec<usize> = (0..set.labels.len()).filter(|&i| keep.contains(set.labels[i].as_str())).collect();
    let dim = set.features.last_dim();
    let data = rows.iter().flat_map(|&i| set.features.row(i).to_vec()).collect();
    let features = habitmotion_core::nn::Tensor::matrix(rows.len(), dim, data);
    FeatureSet::new(features, rows.iter().map(|&i| set.labels[i].clone()).collect()).context("features")
}

fn soft<T>(metric: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| log::warn!("{metric} not computed: {e}")).ok()
}

/// Computes `metrics` of `generated` against `real`. MPJPE pairs motions
/// that share an id.
pub fn evaluate(
    real: &[(String, Motion)],
    generated: &[(String, Motion)],
    extractor: &FeatureExtractor,
    metrics: &BTreeSet<Metric>,
    diversity_pairs: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(AppError::Config("evaluation needs real and generated motions".into()));
    }
    let real_refs: Vec<&Motion> = real.iter().map(|(_, m)| m).collect();
    let gen_refs: Vec<&Motion> = generated.iter().map(|(_, m)| m).collect();
    let needs_features = metrics.iter().any(|m| *m != Metric::Mpjpe);
    let features = if needs_features {
        Some((labeled(extractor, &real_refs)?, labeled(extractor, &gen_refs)?))
    } else {
        None
    };
    let mut report = MetricsReport::default();
    for metric in metrics {
        if *metric == Metric::Mpjpe {
            report.mpjpe = paired_mpjpe(real, generated)?;
            continue;
        }
        let (rf, gf) = features.as_ref().expect("features computed for feature metrics");
        match metric {
            Metric::Fid => report.fid = soft("fid", fid(&gf.features, &rf.features).context("fid")),
            Metric::IntraFid => {
                let rl: BTreeSet<&str> = rf.labels.iter().map(String::as_str).collect();
                let gl: BTreeSet<&str> = gf.labels.iter().map(String::as_str).collect();
                let shared: BTreeSet<&str> = rl.intersection(&gl).copied().collect();
                let r = restrict(&rf, &shared)
                    .and_then(|r| Ok((r, restrict(&gf, &shared)?)))
                    .and_then(|(r, g)| intra_fid(&r, &g).context("intra_fid"));
                report.intra_fid = soft("intra_fid", r).map(|i| IntraFidReport {
                    per_category: i.per_category,
                    mean: i.mean,
                });
            }
            Metric::Downstream => {
                if let Some(d) = soft(
                    "downstream",
                    score_by_target(&gen_refs, &real_refs, extractor).context("downstream"),
                ) {
                    report.downstream = Some(d.mean);
                    report.downstream_per_target = d.per_target;
                }
            }
            Metric::Diversity => {
                report.diversity = soft(
                    "diversity",
                    diversity(&gf.features, diversity_pairs, seed).context("diversity"),
                )
            }
            Metric::OneNna => report.one_nna = soft("one_nna", one_nna(&gf.features, &rf.features).context("one_nna")),
            Metric::Mpjpe => unreachable!("handled above"),
        }
    }
    Ok(report)
}

/// Mean MPJPE over generated motions whose id matches a real one.
fn paired_mpjpe(real: &[(String, Motion)], generated: &[(String, Motion)]) -> Result<Option<f64>> {
    let by_id: BTreeMap<&str, &Motion> = real.iter().map(|(id, m)| (id.as_str(), m)).collect();
    let mut errors = Vec::new();
    for (id, g) in generated {
        if let Some(r) = by_id.get(id.as_str()) {
            errors.push(mpjpe(r, g).context(format!("mpjpe {id}"))?);
        }
    }
    if errors.is_empty() {
        log::warn!("mpjpe not computed: no generated motion shares an id with a real one");
        return Ok(None);
    }
    Ok(Some(errors.iter().sum::<f64>() / errors.len() as f64))
}
