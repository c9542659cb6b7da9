use serde::{Deserialize, Serialize};

use super::gmm::{responsibilities_of, GmmModel};
use crate::things::SyntaxMatrix;

/// Post-processing applied to the raw gradient sums, in field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FvOptions {
    /// Divide by the number of windows.
    pub average: bool,
    /// Signed square root of every entry.
    pub signed_sqrt: bool,
    /// Global L2 normalization.
    pub l2: bool,
}

impl Default for FvOptions {
    fn default() -> Self {
        FvOptions {
            average: true,
            signed_sqrt: true,
            l2: true,
        }
    }
}

impl FvOptions {
    /// The gradient sums exactly, with no normalization.
    pub const RAW: FvOptions = FvOptions {
        average: false,
        signed_sqrt: false,
        l2: false,
    };
}

/// Fisher vector: for each component `k`, the `D` mean gradients followed by
/// the `D` standard-deviation gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherVector {
    pub values: Vec<f64>,
    pub options: FvOptions,
}

impl FisherVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Encodes the windows of `w` against `model`.
///
/// Per window and component the accumulated terms are
/// `γ_k(w) (w - μ_k) / σ_k²` and `γ_k(w) ((w - μ_k)² / σ_k³ - 1 / σ_k)`.
pub fn encode_fv(w: &SyntaxMatrix, model: &GmmModel, options: FvOptions) -> FisherVector {
    encode_features(w.rows.iter().map(|r| model.features(r)), model, options)
}

/// [`encode_fv`] over feature rows already restricted to the model's
/// properties.
pub fn encode_features<I>(rows: I, model: &GmmModel, options: FvOptions) -> FisherVector
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let k = model.k();
    let dim = model.dim();
    let mut values = vec![0.0; 2 * k * dim];
    let log_norms = model.log_norms_cached();
    let sigmas: Vec<f64> = (0..k).flat_map(|c| model.variance(c).iter().map(|v| v.sqrt())).collect();
    let mut gamma = vec![0.0; k];
    let mut n = 0usize;
    for x in rows {
        assert_eq!(x.len(), dim, "feature row does not match the model dimension");
        n += 1;
        responsibilities_of(model, &x, &log_norms, &mut gamma);
        for (c, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mu = model.mean(c);
            let var = model.variance(c);
            let base = 2 * c * dim;
            for d in 0..dim {
                let diff = x[d] - mu[d];
                let sigma = sigmas[c * dim + d];
                values[base + d] += g * diff / var[d];
                values[base + dim + d] += g * (diff * diff / (var[d] * sigma) - 1.0 / sigma);
            }
        }
    }
    if options.average && n > 0 {
        values.iter_mut().for_each(|v| *v /= n as f64);
    }
    if options.signed_sqrt {
        values.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
    }
    if options.l2 {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    FisherVector { values, options }
}
