use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub image_id: String,
    pub score: f64,
}

/// Images by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }
}

/// Sorts scores descending with a deterministic id tie-break.
pub fn rank_images<I, S>(scores: I) -> Result<RankedList, RetrievalError>
where
    I: IntoIterator<Item = (S, f64)>,
    S: Into<String>,
{
    let mut entries = Vec::new();
    for (id, score) in scores {
        let image_id = id.into();
        if !score.is_finite() {
            return Err(RetrievalError::NonFiniteScore { image_id, score });
        }
        entries.push(RankedEntry { image_id, score });
    }
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
    Ok(RankedList { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    /// Min-max normalize each score set, then average.
    #[default]
    ScoreAverage,
    /// Sum of `1 / (k + rank)` over both rankings.
    ReciprocalRank { k: f64 },
}

fn min_max(scores: &BTreeMap<String, f64>) -> BTreeMap<&str, f64> {
    let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .map(|(id, s)| {
            let v = if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
            (id.as_str(), v)
        })
        .collect()
}

/// Combines two score sets over the same images into one ranking.
pub fn fuse_rankings(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    method: FusionMethod,
) -> Result<RankedList, RetrievalError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(RetrievalError::MismatchedImageSets);
    }
    for (id, s) in a.iter().chain(b.iter()) {
        if !s.is_finite() {
            return Err(RetrievalError::NonFiniteScore {
                image_id: id.clone(),
                score: *s,
            });
        }
    }
    match method {
        FusionMethod::ScoreAverage => {
            let na = min_max(a);
            let nb = min_max(b);
            rank_images(na.iter().map(|(id, v)| (id.to_string(), (v + nb[id]) / 2.0)))
        }
        FusionMethod::ReciprocalRank { k } => {
            let ra = rank_images(a.iter().map(|(i, s)| (i.clone(), *s)))?;
            let rb = rank_images(b.iter().map(|(i, s)| (i.clone(), *s)))?;
            let mut fused: BTreeMap<String, f64> = BTreeMap::new();
            for list in [&ra, &rb] {
                for (pos, e) in list.entries.iter().enumerate() {
                    *fused.entry(e.image_id.clone()).or_default() += 1.0 / (k + (pos + 1) as f64);
                }
            }
            rank_images(fused)
        }
    }
}

/// `(1/|R|) Σ_{relevant hits at rank k} hits(k) / k`.
pub fn average_precision(ranked: &RankedList, relevant: &HashSet<String>) -> Result<f64, RetrievalError> {
    if relevant.is_empty() {
        return Err(RetrievalError::EmptyRelevance);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.ids().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits != relevant.len() {
        let ranked_ids: HashSet<&str> = ranked.ids().collect();
        let missing = relevant
            .iter()
            .filter(|r| !ranked_ids.contains(r.as_str()))
            .min()
            .cloned()
            .unwrap_or_default();
        return Err(RetrievalError::RelevantNotRanked(missing));
    }
    Ok(sum / relevant.len() as f64)
}

/// Mean of per-query average precisions.
pub fn mean_average_precision(aps: &[f64]) -> Option<f64> {
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}
