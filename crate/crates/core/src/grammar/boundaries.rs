use serde::{Deserialize, Serialize};

use super::GrammarError;
use crate::things::{Property, SyntaxMatrix, ThingWindow};

/// Per-property cut points, `B - 1` per continuous property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cuts {
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
    pub size: Vec<f64>,
    pub ratio: Vec<f64>,
}

/// Word boundaries for the four continuous properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoundaries", into = "RawBoundaries")]
pub struct BinBoundaries {
    bins: usize,
    cuts: Cuts,
}

#[derive(Serialize, Deserialize)]
struct RawBoundaries {
    #[serde(rename = "B")]
    bins: usize,
    cuts: Cuts,
}

impl From<BinBoundaries> for RawBoundaries {
    fn from(b: BinBoundaries) -> Self {
        RawBoundaries {
            bins: b.bins,
            cuts: b.cuts,
        }
    }
}

impl TryFrom<RawBoundaries> for BinBoundaries {
    type Error = GrammarError;

    fn try_from(raw: RawBoundaries) -> Result<Self, Self::Error> {
        BinBoundaries::new(raw.bins, raw.cuts)
    }
}

impl BinBoundaries {
    /// Validates and wraps explicit cut points.
    pub fn new(bins: usize, cuts: Cuts) -> Result<Self, GrammarError> {
        if bins < 2 {
            return Err(GrammarError::InvalidBins(bins));
        }
        let b = BinBoundaries { bins, cuts };
        for p in Property::CONTINUOUS {
            let c = b.cuts_for(p);
            if c.len() != bins - 1 {
                return Err(GrammarError::InvalidCuts(format!(
                    "{p}: expected {} cut points, got {}",
                    bins - 1,
                    c.len()
                )));
            }
            if c.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(GrammarError::InvalidCuts(format!("{p}: cut points must lie in (0, 1)")));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GrammarError::InvalidCuts(format!("{p}: cut points must be strictly increasing")));
            }
        }
        Ok(b)
    }

    /// Evenly spaced cuts `k / B`.
    pub fn uniform(bins: usize) -> Result<Self, GrammarError> {
        let even: Vec<f64> = (1..bins).map(|k| k as f64 / bins as f64).collect();
        BinBoundaries::new(
            bins,
            Cuts {
                horizontal: even.clone(),
                vertical: even.clone(),
                size: even.clone(),
                ratio: even,
            },
        )
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn cuts(&self) -> &Cuts {
        &self.cuts
    }

    /// Cut points of a continuous property; empty for color.
    pub fn cuts_for(&self, property: Property) -> &[f64] {
        match property {
            Property::Horizontal => &self.cuts.horizontal,
            Property::Vertical => &self.cuts.vertical,
            Property::Size => &self.cuts.size,
            Property::Ratio => &self.cuts.ratio,
            Property::Color => &[],
        }
    }

    /// Bin of a value under half-open intervals `[cut_{k-1}, cut_k)`; the
    /// last bin is closed above.
    pub fn bin_of(&self, property: Property, value: f64) -> usize {
        self.cuts_for(property).partition_point(|&c| c <= value)
    }
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits equal-probability word boundaries: per property, the cut points are
/// the `k / B` quantiles of the pooled holdout values.
pub fn fit_boundaries(holdout: &[SyntaxMatrix], bins: usize) -> Result<BinBoundaries, GrammarError> {
    if bins < 2 {
        return Err(GrammarError::InvalidBins(bins));
    }
    let windows: Vec<&ThingWindow> = holdout.iter().flat_map(|m| m.rows.iter()).collect();
    if windows.len() < bins {
        return Err(GrammarError::InsufficientData {
            needed: bins,
            got: windows.len(),
        });
    }
    let fit = |p: Property| -> Vec<f64> {
        let mut v: Vec<f64> = windows.iter().map(|w| w.value(p)).collect();
        v.sort_by(f64::total_cmp);
        let mut cuts = Vec::with_capacity(bins - 1);
        let mut prev = 0.0f64;
        for k in 1..bins {
            let mut c = quantile_sorted(&v, k as f64 / bins as f64);
            // keep cuts strictly increasing inside (0, 1) even with ties
            if c <= prev {
                c = prev.next_up();
            }
            let ceiling = 1.0 - (bins - k) as f64 * f64::EPSILON;
            cuts.push(c.min(ceiling));
            prev = *cuts.last().unwrap();
        }
        cuts
    };
    BinBoundaries::new(
        bins,
        Cuts {
            horizontal: fit(Property::Horizontal),
            vertical: fit(Property::Vertical),
            size: fit(Property::Size),
            ratio: fit(Property::Ratio),
        },
    )
}
