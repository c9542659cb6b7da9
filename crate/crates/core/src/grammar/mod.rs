//! Abstract statements: equal-probability word boundaries, the closed
//! statement grammar, and statement histograms.

mod boundaries;
mod histogram;
mod statement;

use thiserror::Error;

pub use boundaries::{fit_boundaries, BinBoundaries, Cuts};
pub use histogram::{histogram_from_statements, histogram_from_syntax, HistogramLayout, StatementHistogram};
pub use statement::{parse_statement, quantize_window, render_statement, word, ParseError, Statement};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("bins per property must be at least 2 (got {0})")]
    InvalidBins(usize),
    #[error("invalid cut points: {0}")]
    InvalidCuts(String),
    #[error("insufficient data: need at least {needed} windows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("line {line}: {source}")]
    Statement {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("statement {0} is out of range for this histogram")]
    StatementOutOfRange(Statement),
    #[error("histogram layout mismatch: expected {expected:?}, got {got:?}")]
    LayoutMismatch {
        expected: HistogramLayout,
        got: HistogramLayout,
    },
}
