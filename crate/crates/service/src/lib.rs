//! HTTP query service over a loaded index.
//!
//! | route | reply |
//! |---|---|
//! | `POST /query` | top results for statements, one block illustration, or both fused |
//! | `GET /index/info` | corpus size, `B`, `K` and file digests; 503 until an index is loaded |
//! | `GET /images/{id}/statements` | the statements generated for an indexed image |
//! | `GET /thumbs/{id}` | the image's thumbnail when a thumbnail directory was given |
//!
//! Errors are JSON objects with an `error` kind (`invalid-query`,
//! `parse-error`, `invalid-block`, `index-mismatch`, `index-not-loaded`,
//! `not-found`) and a `message`. Parse errors also carry the 1-based
//! `statement` number, the offending `token`, its 1-based `position`, its byte
//! `column` and what was `expected`.
//!
//! A block colored "any" takes the mean color feature of the data the GMM was
//! fitted on. In statements, the color word "any" spreads the statement over
//! all eleven colors.

mod api;
mod loader;

use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thingsyntax::grammar::{render_statement, StatementHistogram};
use thingsyntax::retrieval::{fuse_rankings, rank_images, DapConfig, FusionMethod, RankedList};
use thingsyntax::PropertyMask;

pub use api::{
    convert_blocks, ApiError, BlockIn, HistogramBin, HistogramSummary, ImageStatements, QueryRequest, QueryResponse,
    QueryResult, DEFAULT_RESULT_LIMIT,
};
pub use loader::{
    load_index_dir, sha256_hex, IndexInfo, LoadError, LoadedIndex, BOUNDARIES_FILE, CORPUS_FILE, GMM_FILE, IMAGES_DIR,
    PRIOR_FILE,
};

/// Shared server state. Requests read a snapshot of the current index, so a
/// reload only becomes visible to requests that start after it.
#[derive(Debug, Default)]
pub struct AppState {
    index: RwLock<Option<Arc<LoadedIndex>>>,
}

impl AppState {
    pub fn empty() -> Arc<AppState> {
        Arc::new(AppState::default())
    }

    pub fn with_index(index: LoadedIndex) -> Arc<AppState> {
        let state = AppState::empty();
        state.swap(index);
        state
    }

    /// Replaces the served index.
    pub fn swap(&self, index: LoadedIndex) {
        *self.index.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(index));
    }

    pub fn current(&self) -> Option<Arc<LoadedIndex>> {
        self.index.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/index/info", get(info))
        .route("/images/{id}/statements", get(statements))
        .route("/thumbs/{id}", get(thumbnail))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
}

fn loaded(state: &AppState) -> Result<Arc<LoadedIndex>, ApiError> {
    state.current().ok_or_else(ApiError::not_loaded)
}

async fn info(State(state): State<Arc<AppState>>) -> Result<Json<IndexInfo>, ApiError> {
    Ok(Json(loaded(&state)?.info.clone()))
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let idx = loaded(&state)?;
    let req: QueryRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid_query(format!("malformed request: {e}")))?;
    let out = tokio::task::spawn_blocking(move || run_query(&idx, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(out).into_response())
}

async fn statements(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ImageStatements>, ApiError> {
    let idx = loaded(&state)?;
    image_statements(&idx, &id).map(Json)
}

async fn thumbnail(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let idx = loaded(&state)?;
    let path = idx
        .thumbnails
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no thumbnail for {id:?}")))?;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::not_found(format!("thumbnail for {id:?}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type(path))], bytes).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

/// Answers a query against `idx`. Pure: the same request and index always
/// give the same response.
pub fn run_query(idx: &LoadedIndex, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    let index = &idx.index;
    if let Some(b) = req.bins {
        if b != index.bins() {
            return Err(ApiError::mismatch(format!("request expects B={b} but the index uses B={}", index.bins())));
        }
    }
    if let Some(k) = req.components {
        if Some(k) != index.components() {
            let have = index.components().map_or("no GMM".to_string(), |k| format!("K={k}"));
            return Err(ApiError::mismatch(format!("request expects K={k} but the index has {have}")));
        }
    }
    if req.result_limit == 0 {
        return Err(ApiError::invalid_query("result_limit must be positive"));
    }
    let texts = match &req.statements {
        Some(s) if s.is_empty() => return Err(ApiError::invalid_query("statements must not be empty")),
        other => other.as_deref(),
    };
    let blocks = match &req.blocks {
        Some(b) if b.is_empty() => return Err(ApiError::invalid_query("blocks must not be empty")),
        Some(b) => Some(convert_blocks(b)?),
        None => None,
    };
    let mask = match &req.properties {
        None => PropertyMask::FULL,
        Some(p) => PropertyMask::new(p.iter().copied())
            .ok_or_else(|| ApiError::invalid_query("properties must name at least one property"))?,
    };
    let texts_owned: Vec<String> = texts.map(<[String]>::to_vec).unwrap_or_default();
    let dap = DapConfig::default();
    let statement_scores = || index.statement_scores(&texts_owned, mask, &dap).map_err(|e| ApiError::from_index(e, &texts_owned));
    let block_scores = |b: Vec<_>| index.block_scores(&[b]).map_err(|e| ApiError::from_index(e, &[]));

    let (mode, ranked): (&str, RankedList) = match (req.fuse, texts, blocks) {
        (false, Some(_), None) => ("statements", rank(statement_scores()?)?),
        (false, None, Some(b)) => ("blocks", rank(block_scores(b)?)?),
        (false, Some(_), Some(_)) => {
            return Err(ApiError::invalid_query("send either statements or blocks, or set fuse=true for both"))
        }
        (true, Some(_), Some(b)) => {
            let s = statement_scores()?;
            let f = block_scores(b)?;
            let fused = fuse_rankings(&s, &f, FusionMethod::ScoreAverage)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
            ("fused", fused)
        }
        (true, _, _) => return Err(ApiError::invalid_query("fuse=true needs both statements and blocks")),
        (false, None, None) => return Err(ApiError::invalid_query("send statements or blocks")),
    };
    let results = ranked
        .entries
        .iter()
        .take(req.result_limit)
        .enumerate()
        .map(|(i, e)| QueryResult {
            image_id: e.image_id.clone(),
            score: e.score,
            rank: i + 1,
            thumbnail_url: idx
                .thumbnails
                .contains_key(&e.image_id)
                .then(|| format!("/thumbs/{}", api::encode_path_segment(&e.image_id))),
        })
        .collect();
    Ok(QueryResponse {
        mode: mode.to_string(),
        corpus_size: index.len(),
        results,
    })
}

fn rank(scores: std::collections::BTreeMap<String, f64>) -> Result<RankedList, ApiError> {
    rank_images(scores).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

/// Generated statements and histogram summary of an indexed image.
pub fn image_statements(idx: &LoadedIndex, id: &str) -> Result<ImageStatements, ApiError> {
    let entry = idx
        .index
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown image id {id:?}")))?;
    let statements = idx.index.statements_of(id).unwrap_or_default();
    Ok(ImageStatements {
        image_id: entry.image_id.clone(),
        scene: entry.scene.clone(),
        statements,
        histogram: summarize(&entry.histogram),
    })
}

fn summarize(h: &StatementHistogram) -> HistogramSummary {
    let bins = h.bins();
    HistogramSummary {
        bins,
        length: h.len(),
        total: h.total(),
        nonzero: h
            .counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .filter_map(|(i, c)| {
                h.layout.statement(i).map(|s| HistogramBin {
                    index: i,
                    statement: render_statement(&s, bins),
                    count: *c,
                })
            })
            .collect(),
    }
}
