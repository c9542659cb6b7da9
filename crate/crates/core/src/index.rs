//! A searchable corpus: per-image statement histograms and Fisher vectors
//! precomputed against fixed boundaries, prior and GMM.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{encode_fv, FisherVector, FvOptions, GmmModel};
use crate::grammar::{histogram_from_syntax, quantize_window, render_statement, BinBoundaries, HistogramLayout, StatementHistogram};
use crate::retrieval::{
    build_scene_profile, dap_score, fv_distance_score, DapConfig, Illustration, PriorModel, ProfileContext,
    ProfileSource, RetrievalError,
};
use crate::things::{PropertyMask, SyntaxMatrix};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("prior layout {prior:?} does not match {bins}-bin boundaries")]
    PriorMismatch { prior: HistogramLayout, bins: usize },
    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),
    #[error("the index has no GMM, so block queries are unavailable")]
    NoGmm,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub image_id: String,
    pub scene: Option<String>,
    pub syntax: SyntaxMatrix,
    /// Counts over the full statement layout.
    pub histogram: StatementHistogram,
    pub fv: Option<FisherVector>,
}

#[derive(Debug, Clone)]
pub struct Index {
    boundaries: BinBoundaries,
    prior: PriorModel,
    gmm: Option<GmmModel>,
    fv_options: FvOptions,
    entries: Vec<IndexEntry>,
    positions: HashMap<String, usize>,
}

impl Index {
    /// Encodes every image of `corpus` (syntax plus optional scene label).
    pub fn new(
        boundaries: BinBoundaries,
        prior: PriorModel,
        gmm: Option<GmmModel>,
        fv_options: FvOptions,
        corpus: Vec<(SyntaxMatrix, Option<String>)>,
    ) -> Result<Index, IndexError> {
        if prior.layout != HistogramLayout::new(boundaries.bins()) {
            return Err(IndexError::PriorMismatch {
                prior: prior.layout,
                bins: boundaries.bins(),
            });
        }
        let mut positions = HashMap::with_capacity(corpus.len());
        for (i, (w, _)) in corpus.iter().enumerate() {
            if positions.insert(w.image_id.clone(), i).is_some() {
                return Err(IndexError::DuplicateImage(w.image_id.clone()));
            }
        }
        let entries = corpus
            .into_par_iter()
            .map(|(syntax, scene)| IndexEntry {
                image_id: syntax.image_id.clone(),
                scene,
                histogram: histogram_from_syntax(&syntax, &boundaries),
                fv: gmm.as_ref().map(|g| encode_fv(&syntax, g, fv_options)),
                syntax,
            })
            .collect();
        Ok(Index {
            boundaries,
            prior,
            gmm,
            fv_options,
            entries,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.boundaries.bins()
    }

    pub fn components(&self) -> Option<usize> {
        self.gmm.as_ref().map(GmmModel::k)
    }

    pub fn boundaries(&self) -> &BinBoundaries {
        &self.boundaries
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn gmm(&self) -> Option<&GmmModel> {
        self.gmm.as_ref()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: &str) -> Option<&IndexEntry> {
        self.positions.get(image_id).map(|&i| &self.entries[i])
    }

    /// Scene label of every labeled image.
    pub fn labels(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .filter_map(|e| e.scene.clone().map(|s| (e.image_id.clone(), s)))
            .collect()
    }

    /// One rendered statement per window of the image, in row order.
    pub fn statements_of(&self, image_id: &str) -> Option<Vec<String>> {
        let e = self.get(image_id)?;
        let bins = self.bins();
        Some(
            e.syntax
                .rows
                .iter()
                .map(|w| render_statement(&quantize_window(w, &self.boundaries), bins))
                .collect(),
        )
    }

    /// DAP scores of every image for a statement query, optionally restricted
    /// to a subset of the properties.
    pub fn statement_scores(
        &self,
        texts: &[String],
        mask: PropertyMask,
        dap: &DapConfig,
    ) -> Result<BTreeMap<String, f64>, IndexError> {
        let profile = build_scene_profile(
            "query",
            ProfileSource::Statements(texts),
            ProfileContext::Statements {
                bins: self.bins(),
                mask,
            },
        )?;
        let prior = self.prior.restrict(mask)?;
        let scores = self
            .entries
            .par_iter()
            .map(|e| {
                let score = if mask.is_full() {
                    dap_score(&e.histogram, &profile, &prior, dap)?
                } else {
                    let h = e.histogram.restrict(mask).map_err(RetrievalError::from)?;
                    dap_score(&h, &profile, &prior, dap)?
                };
                Ok((e.image_id.clone(), score))
            })
            .collect::<Result<Vec<_>, IndexError>>()?;
        Ok(scores.into_iter().collect())
    }

    /// Negated Fisher-vector distances of every image to a block query.
    pub fn block_scores(&self, illustrations: &[Illustration]) -> Result<BTreeMap<String, f64>, IndexError> {
        let gmm = self.gmm.as_ref().ok_or(IndexError::NoGmm)?;
        let profile = build_scene_profile(
            "query",
            ProfileSource::Blocks(illustrations),
            ProfileContext::Fisher {
                model: gmm,
                options: self.fv_options,
            },
        )?;
        let scores = self
            .entries
            .par_iter()
            .map(|e| {
                let fv = e.fv.as_ref().expect("entries carry Fisher vectors when a GMM is present");
                Ok((e.image_id.clone(), fv_distance_score(fv, &profile)?))
            })
            .collect::<Result<Vec<_>, IndexError>>()?;
        Ok(scores.into_iter().collect())
    }
}
