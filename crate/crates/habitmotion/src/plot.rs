//! 2D PCA map of category embeddings, rendered as SVG.

use std::fmt::Write;

use habitmotion_core::retrieval::EmbeddingStore;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{AppError, Result};

pub const MIN_CATEGORIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub label: String,
    pub xy: [f64; 2],
    pub observed: bool,
}

/// Projects each raw embedding onto the top two principal axes. Axis signs
/// are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(store: &EmbeddingStore) -> Result<Vec<MapPoint>> {
    let n = store.len();
    if n < MIN_CATEGORIES {
        return Err(AppError::Config(format!(
            "an embedding map needs at least {MIN_CATEGORIES} categories, got {n}"
        )));
    }
    let d = store.dim();
    let entries: Vec<_> = store.entries().collect();
    let x = DMatrix::from_fn(n, d, |i, j| entries[i].1.raw[j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..2.min(d)]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|c| sign * c).collect()
        })
        .collect();
    Ok(entries
        .iter()
        .enumerate()
        .map(|(i, (label, e))| {
            let coord = |a: &[f64]| (0..d).map(|j| centered[(i, j)] * a[j]).sum::<f64>();
            MapPoint {
                label: label.to_string(),
                xy: [coord(&axes[0]), axes.get(1).map(|a| coord(a)).unwrap_or(0.0)],
                observed: e.observed,
            }
        })
        .collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Labeled scatter plot; observed categories are filled, the rest hollow.
pub fn render_svg(points: &[MapPoint]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 540.0;
    const PAD: f64 = 60.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p.xy[k]);
            hi[k] = hi[k].max(p.xy[k]);
        }
    }
    let span = |k: usize| if hi[k] - lo[k] > 0.0 { hi[k] - lo[k] } else { 1.0 };
    let sx = |x: f64| PAD + (x - lo[0]) / span(0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - lo[1]) / span(1) * (H - 2.0 * PAD);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">Category embeddings (PCA)</text>"#, W / 2.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">PC1</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">PC2</text>"#, H / 2.0, H / 2.0);
    for p in points {
        let (x, y) = (sx(p.xy[0]), sy(p.xy[1]));
        let fill = if p.observed { "#1f77b4" } else { "white" };
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{fill}" stroke="#1f77b4" stroke-width="1.5"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 7.0, y - 7.0, escape(&p.label));
    }
    svg.push_str("</svg>\n");
    svg
}
