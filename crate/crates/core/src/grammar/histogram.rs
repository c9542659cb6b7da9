use serde::{Deserialize, Serialize};

use super::{parse_statement, quantize_window, BinBoundaries, GrammarError, Statement};
use crate::color::Color;
use crate::things::{Property, PropertyMask, SyntaxMatrix};

/// Dense row-major layout over the selected properties, in the fixed order
/// horizontal, vertical, size, ratio, color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramLayout {
    pub bins: usize,
    pub mask: PropertyMask,
}

impl HistogramLayout {
    pub fn new(bins: usize) -> Self {
        HistogramLayout {
            bins,
            mask: PropertyMask::FULL,
        }
    }

    pub fn with_mask(bins: usize, mask: PropertyMask) -> Self {
        HistogramLayout { bins, mask }
    }

    fn extent(&self, p: Property) -> usize {
        match p {
            Property::Color => Color::COUNT,
            _ => self.bins,
        }
    }

    /// `B^c * 11^[color]`, where `c` counts the selected continuous properties.
    pub fn len(&self) -> usize {
        self.mask.properties().map(|p| self.extent(p)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of a statement with a concrete color.
    pub fn index(&self, s: &Statement) -> Option<usize> {
        let mut idx = 0;
        for p in self.mask.properties() {
            let bin = s.bin(p)?;
            if bin >= self.extent(p) {
                return None;
            }
            idx = idx * self.extent(p) + bin;
        }
        Some(idx)
    }

    /// Inverse of [`index`](Self::index) for the full layout.
    pub fn statement(&self, mut index: usize) -> Option<Statement> {
        if !self.mask.is_full() || index >= self.len() {
            return None;
        }
        let color = index % Color::COUNT;
        index /= Color::COUNT;
        let ratio = index % self.bins;
        index /= self.bins;
        let size = index % self.bins;
        index /= self.bins;
        let vertical = index % self.bins;
        let horizontal = index / self.bins;
        Some(Statement {
            horizontal,
            vertical,
            size,
            ratio,
            color: Color::from_index(color),
        })
    }

    /// Maps a full-layout index to this layout by dropping unselected digits.
    fn project_full_index(&self, mut full: usize) -> usize {
        let mut digits = [0usize; 5];
        digits[4] = full % Color::COUNT;
        full /= Color::COUNT;
        for d in (0..4).rev() {
            digits[d] = full % self.bins;
            full /= self.bins;
        }
        self.mask
            .properties()
            .fold(0, |idx, p| idx * self.extent(p) + digits[p.index()])
    }
}

/// Statement counts over a [`HistogramLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementHistogram {
    pub layout: HistogramLayout,
    pub counts: Vec<f64>,
}

impl StatementHistogram {
    pub fn zeros(layout: HistogramLayout) -> Self {
        StatementHistogram {
            layout,
            counts: vec![0.0; layout.len()],
        }
    }

    pub fn bins(&self) -> usize {
        self.layout.bins
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Adds one statement; an "any" color spreads 1/11 over the color slice.
    pub fn add(&mut self, s: &Statement, weight: f64) -> Result<(), GrammarError> {
        if !s.is_valid_for(self.layout.bins) {
            return Err(GrammarError::StatementOutOfRange(*s));
        }
        match s.color {
            Some(_) => {
                let i = self.layout.index(s).expect("validated statement");
                self.counts[i] += weight;
            }
            None => {
                let share = weight / Color::COUNT as f64;
                for c in Color::ALL {
                    let concrete = Statement { color: Some(c), ..*s };
                    let i = self.layout.index(&concrete).expect("validated statement");
                    self.counts[i] += share;
                }
            }
        }
        Ok(())
    }

    /// L1-normalized copy; an all-zero histogram stays zero.
    pub fn normalized(&self) -> StatementHistogram {
        let total = self.total();
        let counts = if total > 0.0 {
            self.counts.iter().map(|c| c / total).collect()
        } else {
            self.counts.clone()
        };
        StatementHistogram {
            layout: self.layout,
            counts,
        }
    }

    /// Marginal over a subset of the properties of a full-layout histogram.
    pub fn restrict(&self, mask: PropertyMask) -> Result<StatementHistogram, GrammarError> {
        if !self.layout.mask.is_full() {
            return Err(GrammarError::LayoutMismatch {
                expected: HistogramLayout::new(self.layout.bins),
                got: self.layout,
            });
        }
        if mask.is_full() {
            return Ok(self.clone());
        }
        let layout = HistogramLayout::with_mask(self.layout.bins, mask);
        let mut out = StatementHistogram::zeros(layout);
        for (i, &c) in self.counts.iter().enumerate() {
            if c != 0.0 {
                out.counts[layout.project_full_index(i)] += c;
            }
        }
        Ok(out)
    }

    /// Non-zero bins of a full-layout histogram with their counts.
    pub fn statements(&self) -> impl Iterator<Item = (Statement, f64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .filter_map(|(i, c)| self.layout.statement(i).map(|s| (s, *c)))
    }
}

/// Counts the statement of every window of `w`.
pub fn histogram_from_syntax(w: &SyntaxMatrix, boundaries: &BinBoundaries) -> StatementHistogram {
    let mut h = StatementHistogram::zeros(HistogramLayout::new(boundaries.bins()));
    for row in &w.rows {
        let s = quantize_window(row, boundaries);
        h.add(&s, 1.0).expect("quantized statements are in range");
    }
    h
}

/// Parses and counts statement texts; errors carry 1-based line numbers.
pub fn histogram_from_statements<S: AsRef<str>>(texts: &[S], bins: usize) -> Result<StatementHistogram, GrammarError> {
    if bins < 2 {
        return Err(GrammarError::InvalidBins(bins));
    }
    let mut h = StatementHistogram::zeros(HistogramLayout::new(bins));
    for (i, t) in texts.iter().enumerate() {
        let s = parse_statement(t.as_ref(), bins).map_err(|source| GrammarError::Statement { line: i + 1, source })?;
        h.add(&s, 1.0)?;
    }
    Ok(h)
}
