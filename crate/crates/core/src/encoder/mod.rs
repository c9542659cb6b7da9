//! Diagonal GMM prototypes over window features and Fisher-vector encoding.

mod fisher;
mod gmm;

use thiserror::Error;

pub use fisher::{encode_features, encode_fv, FisherVector, FvOptions};
pub use gmm::{
    fit_gmm, fit_gmm_windows, log_likelihood, responsibilities, FitInfo, GmmModel, GmmOptions,
};

use crate::things::{PropertyMask, ThingWindow};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("component count must be at least 1")]
    InvalidComponents,
    #[error("insufficient data: need at least {needed} windows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid GMM model: {0}")]
    InvalidModel(String),
}

/// Row-major `n x D` matrix of window features.
#[derive(Debug, Clone)]
pub(crate) struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_windows(windows: &[ThingWindow], mask: PropertyMask) -> Self {
        let dim = mask.count();
        let mut data = Vec::with_capacity(windows.len() * dim);
        for w in windows {
            data.extend(mask.properties().map(|p| w.value(p)));
        }
        FeatureMatrix { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}
