use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::color::Color;
use crate::things::{Property, SyntaxMatrix};

/// Default number of uniform bins for a continuous property.
pub const ANALYSIS_BINS: usize = 10;

/// Laplace-smoothed distribution of one property over a pool of windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDistribution {
    pub property: Property,
    pub probs: Vec<f64>,
}

fn bin_count(property: Property, analysis_bins: usize) -> usize {
    match property {
        Property::Color => Color::COUNT,
        _ => analysis_bins,
    }
}

/// Pools the property values of every window, bins them uniformly on [0, 1]
/// (one bin per color name for color) and smooths with α = 1.
pub fn property_distribution(
    pool: &[SyntaxMatrix],
    property: Property,
    analysis_bins: usize,
) -> Result<PropertyDistribution, AnalysisError> {
    if analysis_bins == 0 {
        return Err(AnalysisError::InvalidBins(analysis_bins));
    }
    let n = bin_count(property, analysis_bins);
    let mut counts = vec![0.0; n];
    let mut total = 0usize;
    for w in pool.iter().flat_map(|m| m.rows.iter()) {
        let i = match property {
            Property::Color => w.color.index(),
            _ => ((w.value(property) * n as f64) as usize).min(n - 1),
        };
        counts[i] += 1.0;
        total += 1;
    }
    if total == 0 {
        return Err(AnalysisError::EmptyPool);
    }
    let denom = total as f64 + n as f64;
    Ok(PropertyDistribution {
        property,
        probs: counts.into_iter().map(|c| (c + 1.0) / denom).collect(),
    })
}

/// `Σ_i P(i) ln(P(i) / Q(i))`, with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &PropertyDistribution, q: &PropertyDistribution) -> Result<f64, AnalysisError> {
    if p.property != q.property || p.probs.len() != q.probs.len() {
        return Err(AnalysisError::ShapeMismatch {
            left: format!("{} over {} bins", p.property, p.probs.len()),
            right: format!("{} over {} bins", q.property, q.probs.len()),
        });
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi > 0.0 {
            if !(qi > 0.0) {
                return Err(AnalysisError::ZeroReference);
            }
            d += pi * (pi / qi).ln();
        }
    }
    // rounding can leave tiny negatives for nearly equal inputs
    Ok(d.max(0.0))
}

/// Pairwise divergences between classes, `values[i][j] = D(P_i ‖ P_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlMatrix {
    pub property: Property,
    pub classes: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub max_pair: (String, String, f64),
    pub min_pair: (String, String, f64),
}

pub fn kl_matrix(distributions: &BTreeMap<String, PropertyDistribution>) -> Result<KlMatrix, AnalysisError> {
    if distributions.len() < 2 {
        return Err(AnalysisError::TooFewClasses(distributions.len()));
    }
    let classes: Vec<String> = distributions.keys().cloned().collect();
    let dists: Vec<&PropertyDistribution> = distributions.values().collect();
    let n = classes.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut max_pair: Option<(usize, usize, f64)> = None;
    let mut min_pair: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = kl_divergence(dists[i], dists[j])?;
            values[i][j] = d;
            if max_pair.is_none_or(|(_, _, m)| d > m) {
                max_pair = Some((i, j, d));
            }
            if min_pair.is_none_or(|(_, _, m)| d < m) {
                min_pair = Some((i, j, d));
            }
        }
    }
    let named = |(i, j, d): (usize, usize, f64)| (classes[i].clone(), classes[j].clone(), d);
    Ok(KlMatrix {
        property: dists[0].property,
        max_pair: named(max_pair.expect("at least two classes")),
        min_pair: named(min_pair.expect("at least two classes")),
        classes,
        values,
    })
}

impl KlMatrix {
    /// Square matrix with class names on both axes, then `max` and `min`
    /// annotation rows of the form `kind,from,to,value`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let mut header = vec![self.property.name().to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (name, row) in self.classes.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).expect("in-memory write");
        }
        for (kind, (a, b, d)) in [("max", &self.max_pair), ("min", &self.min_pair)] {
            let mut rec = vec![kind.to_string(), a.clone(), b.clone(), format!("{d:.6}")];
            rec.resize(header.len().max(4), String::new());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Mean over classes of `D(candidate_c ‖ reference_c)`, for comparing e.g.
/// proposal windows against annotated windows class by class.
pub fn mean_kl_to_reference(
    candidate: &BTreeMap<String, PropertyDistribution>,
    reference: &BTreeMap<String, PropertyDistribution>,
) -> Result<f64, AnalysisError> {
    if candidate.is_empty() || candidate.len() != reference.len() || candidate.keys().ne(reference.keys()) {
        return Err(AnalysisError::ShapeMismatch {
            left: format!("{} classes", candidate.len()),
            right: format!("{} classes", reference.len()),
        });
    }
    let mut sum = 0.0;
    for (c, p) in candidate {
        sum += kl_divergence(p, &reference[c])?;
    }
    Ok(sum / candidate.len() as f64)
}
