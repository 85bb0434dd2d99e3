use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math;
use crate::motion::Motion;
use crate::nn::Tensor;
use crate::rng::{self, SeedStream};

/// Diagonal jitter used when a covariance is numerically singular.
pub const FID_JITTER: f64 = 1e-10;

/// Rows of features with optional per-row category labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    /// `[n, d]`.
    pub features: Tensor,
    /// Empty, or one label per row.
    pub labels: Vec<String>,
}

impl FeatureSet {
    pub fn new(features: Tensor, labels: Vec<String>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("feature set", "features must be [rows, dim]"));
        }
        if !labels.is_empty() && labels.len() != features.rows() {
            return Err(Error::shape("feature set", "one label per row required"));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite { op: "feature set".into() });
        }
        Ok(Self { features, labels })
    }

    pub fn unlabeled(features: Tensor) -> Result<Self> {
        Self::new(features, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows grouped by label.
    pub fn by_label(&self) -> BTreeMap<&str, Tensor> {
        let d = self.features.last_dim();
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            groups.entry(l.as_str()).or_default().extend_from_slice(self.features.row(i));
        }
        groups
            .into_iter()
            .map(|(l, data)| {
                let n = data.len() / d;
                (l, Tensor::matrix(n, d, data))
            })
            .collect()
    }
}

fn moments(x: &Tensor, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.shape().len() != 2 {
        return Err(Error::shape("fid", format!("{what} must be [rows, dim]")));
    }
    let (n, d) = (x.rows(), x.last_dim());
    if n < 2 {
        return Err(Error::invalid(format!("{what} needs at least 2 rows for a covariance, got {n}")));
    }
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = m.row_mean().transpose();
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Eigenvalues and vectors of the symmetric part of `m`.
fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let roots = e.eigenvalues.map(|v| math::sqrt(v.max(0.0)));
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two `[n, d]` feature sets.
pub fn fid(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (mu_a, mut cov_a) = moments(a, "first set")?;
    let (mu_b, mut cov_b) = moments(b, "second set")?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::shape("fid", format!("dims {} and {}", mu_a.len(), mu_b.len())));
    }
    let d = mu_a.len();
    let scale = (cov_a.trace() + cov_b.trace()).abs().max(1.0);
    let degenerate = |c: &DMatrix<f64>| sym_eigen(c).eigenvalues.iter().any(|v| *v < FID_JITTER * scale);
    if degenerate(&cov_a) || degenerate(&cov_b) {
        cov_a += DMatrix::identity(d, d) * FID_JITTER;
        cov_b += DMatrix::identity(d, d) * FID_JITTER;
    }
    let root_a = sqrt_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let cross: f64 = sym_eigen(&inner).eigenvalues.iter().map(|v| math::sqrt(v.max(0.0))).sum();
    let shift = (&mu_a - &mu_b).norm_squared();
    let value = shift + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraFid {
    pub per_category: BTreeMap<String, f64>,
    /// Unweighted mean over `per_category`.
    pub mean: f64,
    /// Categories skipped for having fewer than 2 rows on a side.
    pub excluded: Vec<String>,
}

/// FID within each category shared by `real` and `generated`.
pub fn intra_fid(real: &FeatureSet, generated: &FeatureSet) -> Result<IntraFid> {
    if real.labels.is_empty() || generated.labels.is_empty() {
        return Err(Error::invalid("intra-FID needs labeled feature sets"));
    }
    let (r, g) = (real.by_label(), generated.by_label());
    let rk: BTreeSet<&str> = r.keys().copied().collect();
    let gk: BTreeSet<&str> = g.keys().copied().collect();
    let one_sided: Vec<&str> = rk.symmetric_difference(&gk).copied().collect();
    if !one_sided.is_empty() {
        return Err(Error::invalid(format!("categories on one side only: {}", one_sided.join(", "))));
    }
    let mut per_category = BTreeMap::new();
    let mut excluded = Vec::new();
    for (label, real_rows) in &r {
        let gen_rows = &g[label];
        if real_rows.rows() < 2 || gen_rows.rows() < 2 {
            log::warn!("intra-FID skips {label}: fewer than 2 rows");
            excluded.push(String::from(*label));
            continue;
        }
        per_category.insert(String::from(*label), fid(real_rows, gen_rows)?);
    }
    if per_category.is_empty() {
        return Err(Error::Empty("categories with at least 2 rows on both sides"));
    }
    let mean = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(IntraFid {
        per_category,
        mean,
        excluded,
    })
}

/// Mean distance over `pairs` seeded index pairs drawn with replacement;
/// pairs of one index with itself are redrawn.
pub fn diversity(features: &Tensor, pairs: usize, seed: u64) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::invalid(format!("diversity needs at least 2 rows, got {n}")));
    }
    if pairs == 0 {
        return Err(Error::invalid("diversity needs at least one pair"));
    }
    let mut r = SeedStream::new(seed).rng("metrics.diversity");
    let mut total = 0.0;
    for _ in 0..pairs {
        let (i, j) = loop {
            let i = rng::uniform_index(&mut r, n);
            let j = rng::uniform_index(&mut r, n);
            if i != j {
                break (i, j);
            }
        };
        total += math::euclidean(features.row(i), features.row(j));
    }
    Ok(total / pairs as f64)
}

/// Leave-one-out 1-nearest-neighbour accuracy over the union of generated
/// and real rows. Distance ties go to the candidate with the smaller index in
/// the concatenation `generated ++ real`.
pub fn one_nna(generated: &Tensor, real: &Tensor) -> Result<f64> {
    let (ng, nr) = (generated.rows(), real.rows());
    if ng == 0 || nr == 0 {
        return Err(Error::Empty("1-NNA sets"));
    }
    if generated.last_dim() != real.last_dim() {
        return Err(Error::shape("one_nna", "feature dims differ"));
    }
    let row = |i: usize| if i < ng { generated.row(i) } else { real.row(i - ng) };
    let total = ng + nr;
    if total < 2 {
        return Err(Error::invalid("1-NNA needs at least 2 points"));
    }
    let mut correct = 0usize;
    for i in 0..total {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..total {
            if j == i {
                continue;
            }
            let d = math::squared_distance(row(i), row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        if (best.1 < ng) == (i < ng) {
            correct += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Mean joint-position error over frames and joints, positions from forward
/// kinematics with both roots starting at the origin.
pub fn mpjpe(a: &Motion, b: &Motion) -> Result<f64> {
    if a.skeleton() != b.skeleton() {
        return Err(Error::invalid("MPJPE needs motions on the same skeleton"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(format!("MPJPE frame counts differ: {} vs {}", a.len(), b.len())));
    }
    let (pa, pb) = (a.positions()?, b.positions()?);
    mpjpe_positions(&pa, &pb)
}

/// MPJPE of two position sequences `[T][N]`.
pub fn mpjpe_positions(a: &[Vec<[f64; 3]>], b: &[Vec<[f64; 3]>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) || a.is_empty() {
        return Err(Error::shape("mpjpe", "position sequences differ in shape or are empty"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (x, y) in fa.iter().zip(fb) {
            total += math::norm3(math::sub3(*x, *y));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
