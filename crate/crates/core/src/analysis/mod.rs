//! Property distributions and KL divergence, noise injection, property
//! ablation and the synthetic retrieval experiments with their sweeps.

mod distribution;
mod experiment;
mod noise;

use thiserror::Error;

pub use distribution::{
    kl_divergence, kl_matrix, mean_kl_to_reference, property_distribution, KlMatrix, PropertyDistribution,
    ANALYSIS_BINS,
};
pub use experiment::{
    holdout_prior, mean_map, rank_queries, sweep_csv, typical_statements, ClassQueries, ExperimentConfig, FittedModels, NoiseSpec,
    QueryMode, SweepRow, SyntheticExperiment,
};
pub use noise::{inject_noise, noisy_syntax, ColorPath, NoiseTargets, NoisyImage, NOISE_GRID, NOISE_SCALE_PX};

use crate::encoder::EncoderError;
use crate::grammar::GrammarError;
use crate::index::IndexError;
use crate::retrieval::RetrievalError;
use crate::things::{Property, PropertyMask, ThingError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("analysis bin count must be positive (got {0})")]
    InvalidBins(usize),
    #[error("no windows in the pool")]
    EmptyPool,
    #[error("distribution shapes differ: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("reference distribution has an empty bin where the other does not")]
    ZeroReference,
    #[error("need at least two classes (got {0})")]
    TooFewClasses(usize),
    #[error("property mask must name at least one property")]
    EmptyMask,
    #[error(transparent)]
    Thing(#[from] ThingError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Mask that keeps only `properties`, applied to statement histograms and
/// to the GMM feature columns.
pub fn restrict_properties(properties: &[Property]) -> Result<PropertyMask, AnalysisError> {
    PropertyMask::new(properties.iter().copied()).ok_or(AnalysisError::EmptyMask)
}

/// Independent seed for sub-task `index` of a run seeded with `master`
/// (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::encoder::{encode_fv, fit_gmm, FvOptions, GmmOptions};
    use crate::grammar::{histogram_from_syntax, HistogramLayout};
    use crate::io::{generate_synthetic, Archetype};
    use crate::things::SyntaxMatrix;

    #[test]
    fn masks() {
        assert!(matches!(restrict_properties(&[]), Err(AnalysisError::EmptyMask)));
        let ratio = restrict_properties(&[Property::Ratio]).unwrap();
        assert_eq!(HistogramLayout::with_mask(3, ratio).len(), 3);
        let color = restrict_properties(&[Property::Color]).unwrap();
        assert_eq!(HistogramLayout::with_mask(3, color).len(), 11);
        assert_eq!(restrict_properties(&Property::ALL).unwrap(), PropertyMask::FULL);
    }

    #[test]
    fn full_mask_is_the_unmasked_pipeline() {
        let records = generate_synthetic(&Archetype::ALL, 10, 3);
        let syntax: Vec<SyntaxMatrix> = records.iter().map(|r| r.syntax(None).unwrap()).collect();
        let b = crate::grammar::fit_boundaries(&syntax, 3).unwrap();
        let full = restrict_properties(&Property::ALL).unwrap();
        for w in &syntax {
            let h = histogram_from_syntax(w, &b);
            assert_eq!(h.restrict(full).unwrap(), h);
        }
        let g1 = fit_gmm(&syntax, 4, 0, full, GmmOptions::default()).unwrap();
        let g2 = fit_gmm(&syntax, 4, 0, PropertyMask::FULL, GmmOptions::default()).unwrap();
        assert_eq!(serde_json::to_string(&g1).unwrap(), serde_json::to_string(&g2).unwrap());
        assert_eq!(encode_fv(&syntax[0], &g1, FvOptions::default()), encode_fv(&syntax[0], &g2, FvOptions::default()));
    }

    #[test]
    fn archetype_ratio_distributions_diverge() {
        let records = generate_synthetic(&Archetype::ALL, 100, 7);
        let mut by_class: BTreeMap<String, Vec<SyntaxMatrix>> = BTreeMap::new();
        for r in &records {
            by_class.entry(r.scene.clone().unwrap()).or_default().push(r.syntax(None).unwrap());
        }
        let dists: BTreeMap<String, PropertyDistribution> = by_class
            .iter()
            .map(|(c, pool)| (c.clone(), property_distribution(pool, Property::Ratio, ANALYSIS_BINS).unwrap()))
            .collect();
        let m = kl_matrix(&dists).unwrap();
        assert!(m.values[0][1] > 0.1 && m.values[1][0] > 0.1, "{:?}", m.values);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
