//! Flattening, PCA and t-SNE projection of real and synthetic sequences.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::pca::pca_reduce;
use super::tsne::{tsne_embed, TsneParams};
use crate::error::{Error, Result};
use crate::seqvol::VolumeSequence;

/// One row per sequence in `.vseq` payload order.
pub fn flatten_for_projection(dataset: &[VolumeSequence]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = dataset.first() else {
        return Ok(Vec::new());
    };
    dataset
        .iter()
        .map(|s| {
            if s.dims != first.dims {
                return Err(Error::Validation(format!(
                    "sequence {} has dims {:?}, expected {:?} like {}",
                    s.subject_id, s.dims, first.dims, first.subject_id
                )));
            }
            Ok(s.data.iter().map(|&v| v as f64).collect())
        })
        .collect()
}

/// Inverse of [`flatten_for_projection`] for one row.
pub fn unflatten(row: &[f64], template: &VolumeSequence) -> Result<VolumeSequence> {
    let mut seq = template.clone();
    if row.len() != seq.data.len() {
        return Err(Error::Validation(format!("row of {} values for {} voxels", row.len(), seq.data.len())));
    }
    seq.data = row.iter().map(|&v| v as f32).collect();
    Ok(seq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedItem {
    pub subject_id: String,
    pub source: Source,
    pub coords: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub items: Vec<ProjectedItem>,
    pub pca_dims: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub tsne: TsneParams,
}

/// PCA to `pca_dims` (saturating) followed by 3D t-SNE of the pooled real
/// and synthetic sequences.
pub fn project_sequences(
    real: &[VolumeSequence],
    synthetic: &[VolumeSequence],
    pca_dims: usize,
    tsne: &TsneParams,
) -> Result<ProjectionResult> {
    if tsne.out_dim != 3 {
        return Err(Error::Config(format!("tsne.out_dim must be 3 for projections, got {}", tsne.out_dim)));
    }
    let all: Vec<VolumeSequence> = real.iter().chain(synthetic).cloned().collect();
    let x = flatten_for_projection(&all)?;
    let pca = pca_reduce(&x, pca_dims)?;
    let coords = tsne_embed(&pca.scores, tsne)?;
    let items = all
        .iter()
        .zip(coords)
        .enumerate()
        .map(|(i, (s, c))| ProjectedItem {
            subject_id: s.subject_id.clone(),
            source: if i < real.len() { Source::Real } else { Source::Synthetic },
            coords: [c[0], c[1], c[2]],
        })
        .collect();
    Ok(ProjectionResult {
        items,
        pca_dims: pca.components.len(),
        explained_variance_ratio: pca.explained_variance_ratio,
        tsne: tsne.clone(),
    })
}

impl ProjectionResult {
    /// Columns id, source, x, y, z.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "source", "x", "y", "z"]).expect("in-memory write");
        for it in &self.items {
            let [x, y, z] = it.coords.map(|v| format!("{v:.6}"));
            w.write_record([it.subject_id.clone(), it.source.to_string(), x, y, z]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Scatter plot of coordinate axes `axes`, colored by source.
    pub fn to_svg(&self, axes: (usize, usize)) -> Result<String> {
        if axes.0 > 2 || axes.1 > 2 {
            return Err(Error::Validation(format!("plot axes {axes:?} out of range 0..3")));
        }
        const SIZE: f64 = 480.0;
        const MARGIN: f64 = 24.0;
        let range = |a: usize| {
            let vals = self.items.iter().map(|i| i.coords[a]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi - lo)
            } else {
                (lo - 0.5, 1.0)
            }
        };
        let ((x0, xs), (y0, ys)) = (range(axes.0), range(axes.1));
        let span = SIZE - 2.0 * MARGIN;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for it in &self.items {
            let cx = MARGIN + (it.coords[axes.0] - x0) / xs * span;
            let cy = SIZE - MARGIN - (it.coords[axes.1] - y0) / ys * span;
            let color = match it.source {
                Source::Real => "#1f77b4",
                Source::Synthetic => "#d62728",
            };
            let _ = writeln!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{color}" fill-opacity="0.7"><title>{}</title></circle>"#,
                xml_escape(&it.subject_id)
            );
        }
        let _ = writeln!(svg, r##"<text x="{MARGIN}" y="16" font-size="12" fill="#1f77b4">real</text>"##);
        let _ = writeln!(svg, r##"<text x="{}" y="16" font-size="12" fill="#d62728">synthetic</text>"##, MARGIN + 40.0);
        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
