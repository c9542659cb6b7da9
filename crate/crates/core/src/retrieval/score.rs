use serde::{Deserialize, Serialize};

use super::profile::{PriorModel, SceneProfile};
use super::RetrievalError;
use crate::encoder::FisherVector;
use crate::grammar::StatementHistogram;

/// How a statement profile weighs the per-statement log ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DapVariant {
    /// Weight each statement by its profile frequency.
    #[default]
    Soft,
    /// Weight 1 for every statement present in the profile, 0 otherwise.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DapConfig {
    /// Laplace pseudo-count added to every image histogram bin.
    pub alpha: f64,
    pub variant: DapVariant,
}

impl Default for DapConfig {
    fn default() -> Self {
        DapConfig {
            alpha: 1.0,
            variant: DapVariant::Soft,
        }
    }
}

/// Log-domain attribute-prediction score of an image for a statement profile:
/// `Σ_m q(m) (log p̂_x(m) - log p̂_prior(m))`. Higher is better.
pub fn dap_score(
    image: &StatementHistogram,
    profile: &SceneProfile,
    prior: &PriorModel,
    config: &DapConfig,
) -> Result<f64, RetrievalError> {
    let q = profile.histogram().ok_or(RetrievalError::KindMismatch)?;
    if image.layout != q.layout {
        return Err(RetrievalError::DimensionMismatch {
            expected: format!("{:?} ({} bins)", q.layout, q.len()),
            got: format!("{:?} ({} bins)", image.layout, image.len()),
        });
    }
    if prior.layout != q.layout {
        return Err(RetrievalError::DimensionMismatch {
            expected: format!("{:?} ({} bins)", q.layout, q.len()),
            got: format!("prior {:?} ({} bins)", prior.layout, prior.probs.len()),
        });
    }
    let denom = image.total() + config.alpha * image.len() as f64;
    let mut score = 0.0;
    for (m, &weight) in q.counts.iter().enumerate() {
        if weight <= 0.0 {
            continue;
        }
        let w = match config.variant {
            DapVariant::Soft => weight,
            DapVariant::Binary => 1.0,
        };
        let p_x = (image.counts[m] + config.alpha) / denom;
        score += w * (p_x.ln() - prior.probs[m].ln());
    }
    Ok(score)
}

/// Negated Euclidean distance between an image and a profile Fisher vector.
pub fn fv_distance_score(image: &FisherVector, profile: &SceneProfile) -> Result<f64, RetrievalError> {
    let p = profile.fisher_vector().ok_or(RetrievalError::KindMismatch)?;
    if p.len() != image.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: format!("Fisher vector of length {}", p.len()),
            got: format!("length {}", image.len()),
        });
    }
    let d2: f64 = image.values.iter().zip(&p.values).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-d2.sqrt())
}
