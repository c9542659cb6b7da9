use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{write_atomic, IoError};
use crate::encoder::GmmModel;
use crate::grammar::BinBoundaries;
use crate::retrieval::{PriorModel, ProfilePayload, SceneProfile};

/// Version written into, and required from, every model file.
pub const MODEL_VERSION: u32 = 1;

const KIND_KEY: &str = "model";
const VERSION_KEY: &str = "version";
const CHECKSUM_KEY: &str = "checksum";

/// A type persisted as a versioned, checksummed JSON model file.
pub trait ModelFile: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Invariants beyond what deserialization enforces.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl ModelFile for BinBoundaries {
    const KIND: &'static str = "bin-boundaries";
}

impl ModelFile for GmmModel {
    const KIND: &'static str = "gmm";
}

fn check_distribution(probs: &[f64], what: &str) -> Result<(), String> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(format!("{what} is not a probability vector (sum {sum})"));
    }
    Ok(())
}

impl ModelFile for SceneProfile {
    const KIND: &'static str = "scene-profile";

    fn check(&self) -> Result<(), String> {
        match &self.payload {
            ProfilePayload::StatementHistogram { bins, payload } => {
                if *bins != payload.layout.bins || payload.counts.len() != payload.layout.len() {
                    return Err("histogram payload does not match its layout".into());
                }
                check_distribution(&payload.counts, "profile histogram")
            }
            ProfilePayload::FisherVector { components, payload } => {
                if *components == 0 || payload.values.is_empty() || payload.values.len() % (2 * components) != 0 {
                    return Err(format!(
                        "Fisher vector length {} does not fit {components} components",
                        payload.values.len()
                    ));
                }
                if payload.values.iter().any(|v| !v.is_finite()) {
                    return Err("non-finite Fisher vector entry".into());
                }
                Ok(())
            }
        }
    }
}

impl ModelFile for PriorModel {
    const KIND: &'static str = "prior";

    fn check(&self) -> Result<(), String> {
        let n = self.layout.len();
        if self.counts.layout != self.layout || self.counts.counts.len() != n || self.probs.len() != n {
            return Err("prior vectors do not match the layout".into());
        }
        if !(self.alpha > 0.0) || self.probs.iter().any(|p| !(*p > 0.0)) {
            return Err("prior must be strictly positive".into());
        }
        check_distribution(&self.probs, "prior")
    }
}

// Rebuilds every object with its keys inserted in sorted order, so the
// serialized form does not depend on serde_json's map backend.
fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

fn digest(body: &Map<String, Value>) -> String {
    let bytes = serde_json::to_vec(body).expect("JSON values always serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a model file: the model's fields plus kind, version and a
/// SHA-256 checksum over the canonical compact JSON of everything else.
pub fn to_model_bytes<T: ModelFile>(model: &T) -> Result<Vec<u8>, IoError> {
    let value = serde_json::to_value(model).map_err(|e| IoError::Corrupt(format!("cannot serialize model: {e}")))?;
    let Value::Object(mut body) = canonical(value) else {
        return Err(IoError::Corrupt(format!("{} does not serialize to a JSON object", T::KIND)));
    };
    for key in [KIND_KEY, VERSION_KEY, CHECKSUM_KEY] {
        if body.contains_key(key) {
            return Err(IoError::Corrupt(format!("{} already has a {key:?} field", T::KIND)));
        }
    }
    body.insert(KIND_KEY.into(), Value::from(T::KIND));
    body.insert(VERSION_KEY.into(), Value::from(MODEL_VERSION));
    let Value::Object(mut body) = canonical(Value::Object(body)) else {
        unreachable!()
    };
    let sum = digest(&body);
    body.insert(CHECKSUM_KEY.into(), Value::from(sum));
    let Value::Object(body) = canonical(Value::Object(body)) else {
        unreachable!()
    };
    let mut out = serde_json::to_vec_pretty(&body).expect("JSON values always serialize");
    out.push(b'\n');
    Ok(out)
}

/// Parses and verifies a model file. Nothing is returned unless kind,
/// version, checksum and the model's own invariants all hold.
pub fn from_model_bytes<T: ModelFile>(bytes: &[u8]) -> Result<T, IoError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| {
        if e.is_eof() {
            IoError::Checksum(format!("file is truncated ({e})"))
        } else {
            IoError::Corrupt(e.to_string())
        }
    })?;
    let Value::Object(mut body) = canonical(value) else {
        return Err(IoError::Corrupt("top level is not a JSON object".into()));
    };
    let found = body.get(KIND_KEY).and_then(Value::as_str).unwrap_or("<none>");
    if found != T::KIND {
        return Err(IoError::WrongModelKind {
            expected: T::KIND.into(),
            found: found.into(),
        });
    }
    match body.get(VERSION_KEY).and_then(Value::as_u64) {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(v) => {
            return Err(IoError::VersionMismatch {
                expected: MODEL_VERSION,
                found: v,
            })
        }
        None => return Err(IoError::Corrupt("missing or non-integer version".into())),
    }
    let stored = match body.remove(CHECKSUM_KEY) {
        Some(Value::String(s)) => s,
        _ => return Err(IoError::Checksum("missing checksum".into())),
    };
    let computed = digest(&body);
    if stored != computed {
        return Err(IoError::Checksum(format!("stored {stored}, computed {computed}")));
    }
    body.remove(KIND_KEY);
    body.remove(VERSION_KEY);
    let model: T = serde_json::from_value(Value::Object(body)).map_err(|e| IoError::Corrupt(e.to_string()))?;
    model.check().map_err(IoError::Corrupt)?;
    Ok(model)
}

pub fn save_model<T: ModelFile>(path: &Path, model: &T) -> Result<(), IoError> {
    write_atomic(path, &to_model_bytes(model)?)
}

pub fn load_model<T: ModelFile>(path: &Path) -> Result<T, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    from_model_bytes(&bytes)
}
