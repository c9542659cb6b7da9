use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thingsyntax::grammar::{GrammarError, ParseError};
use thingsyntax::index::IndexError;
use thingsyntax::retrieval::{Block, BlockColor, RetrievalError};
use thingsyntax::{Color, Property};

pub const DEFAULT_RESULT_LIMIT: usize = 20;

/// A drawn block as sent over the wire; the color is a name or "any".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockIn {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statements: Option<Vec<String>>,
    /// The blocks of one illustration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockIn>>,
    #[serde(default = "default_limit")]
    pub result_limit: usize,
    #[serde(default)]
    pub fuse: bool,
    /// Expected bins per property; 409 when the index differs.
    #[serde(default, alias = "B", skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Expected GMM size; 409 when the index differs.
    #[serde(default, alias = "K", skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    /// Restricts statement scoring to these properties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties: Option<Vec<Property>>,
}

fn default_limit() -> usize {
    DEFAULT_RESULT_LIMIT
}

impl QueryRequest {
    pub fn statements(texts: &[&str]) -> QueryRequest {
        QueryRequest {
            statements: Some(texts.iter().map(|s| s.to_string()).collect()),
            blocks: None,
            result_limit: DEFAULT_RESULT_LIMIT,
            fuse: false,
            bins: None,
            components: None,
            properties: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub image_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub mode: String,
    pub corpus_size: usize,
    pub results: Vec<QueryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub index: usize,
    pub statement: String,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    #[serde(rename = "B")]
    pub bins: usize,
    pub length: usize,
    pub total: f64,
    /// Non-empty bins in index order.
    pub nonzero: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStatements {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    pub statements: Vec<String>,
    pub histogram: HistogramSummary,
}

/// A JSON error reply: `{"error": kind, "message": ..., ...details}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            body: json!({ "error": kind, "message": message.into() }),
        }
    }

    pub fn invalid_query(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid-query", message)
    }

    pub fn mismatch(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::CONFLICT, "index-mismatch", message)
    }

    pub fn not_loaded() -> ApiError {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index-not-loaded", "no index is loaded")
    }

    pub fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    fn detail(mut self, key: &str, value: Value) -> ApiError {
        self.body[key] = value;
        self
    }

    pub(crate) fn parse(statement: usize, text: &str, e: &ParseError) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "parse-error", format!("statement {statement}: {e}"))
            .detail("statement", json!(statement))
            .detail("text", json!(text))
            .detail("token", json!(e.token))
            .detail("position", json!(e.position))
            .detail("column", json!(e.column))
            .detail("expected", json!(e.expected))
    }

    pub(crate) fn block(index: usize, message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid-block", message).detail("block", json!(index))
    }

    pub(crate) fn from_index(e: IndexError, statements: &[String]) -> ApiError {
        match e {
            IndexError::Retrieval(RetrievalError::Grammar(GrammarError::Statement { line, source })) => {
                let text = statements.get(line.wrapping_sub(1)).map(String::as_str).unwrap_or("");
                ApiError::parse(line, text, &source)
            }
            IndexError::NoGmm => ApiError::mismatch(e.to_string()),
            IndexError::Retrieval(RetrievalError::InvalidBlock(b)) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid-block", format!("invalid block {b:?}"))
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Converts wire blocks, pointing at the first bad one.
pub fn convert_blocks(blocks: &[BlockIn]) -> Result<Vec<Block>, ApiError> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let color = if b.color.eq_ignore_ascii_case("any") {
                BlockColor::Any
            } else {
                BlockColor::Named(
                    b.color
                        .parse::<Color>()
                        .map_err(|e| ApiError::block(i, format!("block {i}: {e}")).detail("field", json!("color")))?,
                )
            };
            let block = Block {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                color,
            };
            block.validate().map_err(|_| {
                ApiError::block(
                    i,
                    format!(
                        "block {i}: need finite 0 <= x, y and 0 < w, h with x + w <= 1 and y + h <= 1 (got x={}, y={}, w={}, h={})",
                        b.x, b.y, b.w, b.h
                    ),
                )
            })?;
            Ok(block)
        })
        .collect()
}

/// Percent-encodes everything outside the unreserved URL characters.
pub(crate) fn encode_path_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
