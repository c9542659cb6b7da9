use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thingsyntax::io::write_atomic;
use thingsyntax_service::sha256_hex;

use crate::CliError;

/// Tracks what one command reads and writes. Outputs are written atomically;
/// if the command fails, everything it wrote is removed.
#[derive(Debug)]
pub struct Run {
    command: String,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

impl Run {
    pub fn new(command: &str, dir: &Path) -> Run {
        Run {
            command: command.to_string(),
            dir: dir.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            written: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    /// Records the digest of an input file.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.insert(self.key(path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Output(format!("{}: {e}", parent.display())))?;
        }
        write_atomic(path, bytes).map_err(|e| CliError::Output(e.to_string()))?;
        self.written.push(path.to_path_buf());
        self.outputs.insert(self.key(path), sha256_hex(bytes));
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, path: &Path, rows: &[T]) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut bytes, r).map_err(|e| CliError::Output(e.to_string()))?;
            bytes.push(b'\n');
        }
        self.write(path, &bytes)
    }

    /// Writes `<command>.manifest.json` next to the outputs.
    pub fn finish(mut self, config: &impl Serialize, extra: Value) -> Result<PathBuf, CliError> {
        let manifest = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "details": extra,
        });
        let path = self.dir.join(format!("{}.manifest.json", self.command));
        self.write_json(&path, &manifest)?;
        self.written.clear();
        Ok(path)
    }

    /// Removes every output written so far.
    pub fn abort(&mut self) {
        for p in self.written.drain(..) {
            if let Err(e) = std::fs::remove_file(&p) {
                log::warn!("could not remove partial output {}: {e}", p.display());
            }
        }
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        self.abort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_runs_leave_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut run = Run::new("x", dir.path());
            run.write(&dir.path().join("a.txt"), b"a").unwrap();
            assert!(dir.path().join("a.txt").exists());
        }
        assert!(!dir.path().join("a.txt").exists());
    }

    #[test]
    fn manifest_lists_digests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("in.txt"), b"in").unwrap();
        let mut run = Run::new("cmd", dir.path());
        run.input(&dir.path().join("in.txt")).unwrap();
        run.seed("gmm", 4);
        run.write(&dir.path().join("sub/out.txt"), b"out").unwrap();
        let path = run.finish(&serde_json::json!({"B": 3}), Value::Null).unwrap();
        let m: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(m["inputs"]["in.txt"], sha256_hex(b"in"));
        assert_eq!(m["outputs"]["sub/out.txt"], sha256_hex(b"out"));
        assert_eq!(m["seeds"]["gmm"], 4);
        assert!(dir.path().join("sub/out.txt").exists());
    }
}
