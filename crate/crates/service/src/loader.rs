use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thingsyntax::encoder::{FvOptions, GmmModel};
use thingsyntax::grammar::BinBoundaries;
use thingsyntax::index::{Index, IndexError};
use thingsyntax::io::{load_model, load_windows_with, IoError, LoadOptions};
use thingsyntax::retrieval::PriorModel;
use thiserror::Error;

/// Test-corpus windows, one JSON record per line.
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const BOUNDARIES_FILE: &str = "boundaries.json";
pub const PRIOR_FILE: &str = "prior.json";
/// Optional; without it block queries are refused.
pub const GMM_FILE: &str = "gmm.json";
/// Optional directory of `<image_id>.{png,jpg,jpeg}` for boxes without color labels.
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: IoError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Metadata reported by `GET /index/info`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexInfo {
    pub corpus_size: usize,
    #[serde(rename = "B")]
    pub bins: usize,
    #[serde(rename = "K")]
    pub components: Option<usize>,
    pub boundaries_digest: String,
    /// sha256 of each loaded file, keyed by file name.
    pub model_digests: BTreeMap<String, String>,
}

/// An index together with what the service needs to describe it.
#[derive(Debug)]
pub struct LoadedIndex {
    pub index: Index,
    pub info: IndexInfo,
    /// Thumbnail file per image id.
    pub thumbnails: HashMap<String, PathBuf>,
}

impl LoadedIndex {
    /// Wraps an in-memory index; digests are taken over the canonical model bytes.
    pub fn from_index(index: Index) -> LoadedIndex {
        let mut digests = BTreeMap::new();
        let model_digest = |bytes: Result<Vec<u8>, IoError>| bytes.map(|b| sha256_hex(&b)).unwrap_or_default();
        let boundaries_digest = model_digest(thingsyntax::io::to_model_bytes(index.boundaries()));
        digests.insert(BOUNDARIES_FILE.to_string(), boundaries_digest.clone());
        digests.insert(PRIOR_FILE.to_string(), model_digest(thingsyntax::io::to_model_bytes(index.prior())));
        if let Some(g) = index.gmm() {
            digests.insert(GMM_FILE.to_string(), model_digest(thingsyntax::io::to_model_bytes(g)));
        }
        LoadedIndex {
            info: IndexInfo {
                corpus_size: index.len(),
                bins: index.bins(),
                components: index.components(),
                boundaries_digest,
                model_digests: digests,
            },
            index,
            thumbnails: HashMap::new(),
        }
    }

    /// Registers `<dir>/<image_id>.{png,jpg,jpeg,gif,webp}` thumbnails for indexed images.
    pub fn with_thumbnails(mut self, dir: &Path) -> LoadedIndex {
        for e in self.index.entries() {
            let found = THUMB_EXTENSIONS
                .iter()
                .map(|ext| dir.join(format!("{}.{ext}", e.image_id)))
                .find(|p| p.is_file());
            if let Some(p) = found {
                self.thumbnails.insert(e.image_id.clone(), p);
            }
        }
        self
    }
}

pub(crate) const THUMB_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "gif", "webp"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, LoadError> {
    std::fs::read(path).map_err(|source| LoadError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(IoError) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an index directory: `boundaries.json`, `prior.json`, optional
/// `gmm.json` and the corpus windows (`corpus.jsonl` unless `corpus` is given).
pub fn load_index_dir(dir: &Path, corpus: Option<&Path>) -> Result<LoadedIndex, LoadError> {
    let mut digests = BTreeMap::new();
    let boundaries_path = dir.join(BOUNDARIES_FILE);
    let boundaries_digest = sha256_hex(&read(&boundaries_path)?);
    let boundaries: BinBoundaries = load_model(&boundaries_path).map_err(io_err(&boundaries_path))?;
    digests.insert(BOUNDARIES_FILE.to_string(), boundaries_digest.clone());

    let prior_path = dir.join(PRIOR_FILE);
    digests.insert(PRIOR_FILE.to_string(), sha256_hex(&read(&prior_path)?));
    let prior: PriorModel = load_model(&prior_path).map_err(io_err(&prior_path))?;

    let gmm_path = dir.join(GMM_FILE);
    let gmm: Option<GmmModel> = if gmm_path.is_file() {
        digests.insert(GMM_FILE.to_string(), sha256_hex(&read(&gmm_path)?));
        Some(load_model(&gmm_path).map_err(io_err(&gmm_path))?)
    } else {
        None
    };

    let corpus_path = corpus.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CORPUS_FILE));
    let corpus_key = corpus_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| CORPUS_FILE.to_string());
    digests.insert(corpus_key, sha256_hex(&read(&corpus_path)?));
    let report = load_windows_with(&corpus_path, &LoadOptions::default()).map_err(io_err(&corpus_path))?;
    for w in &report.warnings {
        log::warn!("{}: line {}: image {}: box {} dropped: {}", corpus_path.display(), w.line, w.image_id, w.box_index, w.reason);
    }
    let images = dir.join(IMAGES_DIR);
    let images = images.is_dir().then_some(images.as_path());
    let mut rows = Vec::with_capacity(report.records.len());
    for r in &report.records {
        let syntax = r.syntax_with_images(images).map_err(io_err(&corpus_path))?;
        rows.push((syntax, r.scene.clone()));
    }
    let index = Index::new(boundaries, prior, gmm, FvOptions::default(), rows)?;
    log::info!("loaded {} images from {}", index.len(), dir.display());
    Ok(LoadedIndex {
        info: IndexInfo {
            corpus_size: index.len(),
            bins: index.bins(),
            components: index.components(),
            boundaries_digest,
            model_digests: digests,
        },
        index,
        thumbnails: HashMap::new(),
    })
}
