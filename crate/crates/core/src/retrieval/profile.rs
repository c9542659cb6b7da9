use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::color::Color;
use crate::encoder::{encode_features, FisherVector, FvOptions, GmmModel};
use crate::grammar::{histogram_from_statements, HistogramLayout, StatementHistogram};
use crate::things::{aspect_ratio, Property, PropertyMask};

/// Color of a drawn block: a named color or "any".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockColor {
    Named(Color),
    Any,
}

impl Serialize for BlockColor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BlockColor::Named(c) => s.serialize_str(c.name()),
            BlockColor::Any => s.serialize_str("any"),
        }
    }
}

impl<'de> Deserialize<'de> for BlockColor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("any") {
            Ok(BlockColor::Any)
        } else {
            s.parse::<Color>().map(BlockColor::Named).map_err(serde::de::Error::custom)
        }
    }
}

/// One rectangle of a block illustration, in unit-canvas coordinates with
/// `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub color: BlockColor,
}

const CANVAS_SLACK: f64 = 1e-9;

impl Block {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        let inside = self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + CANVAS_SLACK
            && self.y + self.h <= 1.0 + CANVAS_SLACK;
        if finite && inside {
            Ok(())
        } else {
            Err(RetrievalError::InvalidBlock(*self))
        }
    }

    /// Feature vector for `model`'s properties. An "any" color takes the
    /// mean color value of the data the model was fitted on.
    pub fn features(&self, model: &GmmModel) -> Result<Vec<f64>, RetrievalError> {
        self.validate()?;
        let ratio = aspect_ratio(self.w, self.h).map_err(|_| RetrievalError::InvalidBlock(*self))?;
        let mut out = Vec::with_capacity(model.dim());
        for (d, p) in model.mask().properties().enumerate() {
            out.push(match p {
                Property::Horizontal => self.x + self.w / 2.0,
                Property::Vertical => self.y + self.h / 2.0,
                Property::Size => self.w * self.h,
                Property::Ratio => ratio,
                Property::Color => match self.color {
                    BlockColor::Named(c) => c.as_feature(),
                    BlockColor::Any => model.fit_info().feature_mean.get(d).copied().unwrap_or(0.5),
                },
            });
        }
        Ok(out)
    }
}

/// A block illustration: the drawn things of one imagined scene.
pub type Illustration = Vec<Block>;

/// Representation of a scene built without example images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneProfile {
    pub scene_id: String,
    #[serde(flatten)]
    pub payload: ProfilePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfilePayload {
    StatementHistogram {
        #[serde(rename = "B")]
        bins: usize,
        payload: StatementHistogram,
    },
    FisherVector {
        #[serde(rename = "K")]
        components: usize,
        payload: FisherVector,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    StatementHistogram,
    FisherVector,
}

impl SceneProfile {
    pub fn kind(&self) -> ProfileKind {
        match self.payload {
            ProfilePayload::StatementHistogram { .. } => ProfileKind::StatementHistogram,
            ProfilePayload::FisherVector { .. } => ProfileKind::FisherVector,
        }
    }

    pub fn histogram(&self) -> Option<&StatementHistogram> {
        match &self.payload {
            ProfilePayload::StatementHistogram { payload, .. } => Some(payload),
            _ => None,
        }
    }

    pub fn fisher_vector(&self) -> Option<&FisherVector> {
        match &self.payload {
            ProfilePayload::FisherVector { payload, .. } => Some(payload),
            _ => None,
        }
    }
}

/// Where a profile comes from.
#[derive(Debug, Clone, Copy)]
pub enum ProfileSource<'a> {
    Statements(&'a [String]),
    Blocks(&'a [Illustration]),
}

/// What a profile is built against.
#[derive(Debug, Clone, Copy)]
pub enum ProfileContext<'a> {
    Statements { bins: usize, mask: PropertyMask },
    Fisher { model: &'a GmmModel, options: FvOptions },
}

/// Statement sources give an L1-normalized statement histogram; block
/// sources give the Fisher vector of all blocks merged into one matrix.
pub fn build_scene_profile(
    scene_id: &str,
    source: ProfileSource<'_>,
    context: ProfileContext<'_>,
) -> Result<SceneProfile, RetrievalError> {
    match (source, context) {
        (ProfileSource::Statements(texts), ProfileContext::Statements { bins, mask }) => {
            if texts.is_empty() {
                return Err(RetrievalError::EmptySource);
            }
            let hist = histogram_from_statements(texts, bins)?.restrict(mask)?.normalized();
            Ok(SceneProfile {
                scene_id: scene_id.to_string(),
                payload: ProfilePayload::StatementHistogram { bins, payload: hist },
            })
        }
        (ProfileSource::Blocks(illustrations), ProfileContext::Fisher { model, options }) => {
            if illustrations.iter().all(|i| i.is_empty()) {
                return Err(RetrievalError::EmptySource);
            }
            let rows = illustrations
                .iter()
                .flatten()
                .map(|b| b.features(model))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SceneProfile {
                scene_id: scene_id.to_string(),
                payload: ProfilePayload::FisherVector {
                    components: model.k(),
                    payload: encode_features(rows, model, options),
                },
            })
        }
        _ => Err(RetrievalError::KindMismatch),
    }
}

/// Statement prior estimated from holdout statement counts, Laplace-smoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub alpha: f64,
    /// Raw holdout counts over the full statement layout.
    pub counts: StatementHistogram,
    pub probs: Vec<f64>,
    pub layout: HistogramLayout,
}

impl PriorModel {
    pub fn from_counts(counts: StatementHistogram, alpha: f64) -> Result<Self, RetrievalError> {
        if !(alpha > 0.0) {
            return Err(RetrievalError::InvalidSmoothing(alpha));
        }
        let probs = smoothed(&counts, alpha);
        Ok(PriorModel {
            alpha,
            layout: counts.layout,
            probs,
            counts,
        })
    }

    /// Prior over a restricted layout, smoothed after marginalizing.
    pub fn restrict(&self, mask: PropertyMask) -> Result<PriorModel, RetrievalError> {
        if mask == self.layout.mask {
            return Ok(self.clone());
        }
        PriorModel::from_counts(self.counts.restrict(mask)?, self.alpha)
    }
}

/// `(c_m + α) / (N + α D)`.
pub(crate) fn smoothed(h: &StatementHistogram, alpha: f64) -> Vec<f64> {
    let denom = h.total() + alpha * h.len() as f64;
    h.counts.iter().map(|c| (c + alpha) / denom).collect()
}
