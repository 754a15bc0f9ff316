//! Artifact files and run manifests.
//!
//! JSON artifacts are `{"config_hash", "subcommand", "data"}` envelopes; CSV
//! artifacts start with a `# config_hash: <hex>` comment line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl IoError {
    fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs { path: path.to_path_buf(), source }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    config_hash: String,
    subcommand: String,
    data: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dependency {
    pub subcommand: String,
    /// `"reused"` when a matching artifact was found, `"auto_run"` otherwise.
    pub action: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub version: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub dependencies: Vec<Dependency>,
}

pub struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    subcommand: String,
    seed: u64,
    written: Vec<ArtifactEntry>,
    deps: Vec<Dependency>,
}

fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::fs(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ArtifactWriter {
    pub fn new(dir: &Path, hash: &str, subcommand: &str, seed: u64) -> Result<Self, IoError> {
        fs::create_dir_all(dir).map_err(|e| IoError::fs(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            subcommand: subcommand.to_string(),
            seed,
            written: Vec::new(),
            deps: Vec::new(),
        })
    }

    /// A writer for a sibling subcommand sharing the same directory and hash.
    pub fn child(&self, subcommand: &str) -> Self {
        Self {
            dir: self.dir.clone(),
            hash: self.hash.clone(),
            subcommand: subcommand.to_string(),
            seed: self.seed,
            written: Vec::new(),
            deps: Vec::new(),
        }
    }

    fn record(&mut self, name: &str) -> Result<(), IoError> {
        let sha256 = sha256_file(&self.dir.join(name))?;
        self.written.push(ArtifactEntry { file: name.to_string(), sha256 });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<(), IoError> {
        let path = self.dir.join(name);
        let env = Envelope {
            config_hash: self.hash.clone(),
            subcommand: self.subcommand.clone(),
            data,
        };
        let text = serde_json::to_string_pretty(&env).map_err(|e| IoError::Json { path: path.clone(), source: e })?;
        fs::write(&path, text + "\n").map_err(|e| IoError::fs(&path, e))?;
        self.record(name)
    }

    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), IoError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| IoError::fs(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# config_hash: {}", self.hash)
            .and_then(|_| body(&mut w))
            .and_then(|_| w.flush())
            .map_err(|e| IoError::fs(&path, e))?;
        drop(w);
        self.record(name)
    }

    /// Loads `name` if it exists and was written under the same config hash.
    pub fn load<T: DeserializeOwned>(&self, name: &str) -> Option<T> {
        let text = fs::read_to_string(self.dir.join(name)).ok()?;
        let env: Envelope<T> = serde_json::from_str(&text).ok()?;
        (env.config_hash == self.hash).then_some(env.data)
    }

    pub fn depend(&mut self, subcommand: &str, reused: bool) {
        self.deps.push(Dependency {
            subcommand: subcommand.to_string(),
            action: if reused { "reused" } else { "auto_run" }.to_string(),
        });
    }

    pub fn finish(self) -> Result<Manifest, IoError> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = Manifest {
            subcommand: self.subcommand.clone(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            timestamp,
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: self.written,
            dependencies: self.deps,
        };
        let path = self.dir.join(format!("{}.manifest.json", self.subcommand));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| IoError::Json { path: path.clone(), source: e })?;
        fs::write(&path, text + "\n").map_err(|e| IoError::fs(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_requires_matching_hash() {
        let d = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(d.path(), "aa", "solve-1d", 1).unwrap();
        w.json("x.json", &vec![1.0, 2.0]).unwrap();
        assert_eq!(w.load::<Vec<f64>>("x.json"), Some(vec![1.0, 2.0]));
        let other = ArtifactWriter::new(d.path(), "bb", "solve-1d", 1).unwrap();
        assert_eq!(other.load::<Vec<f64>>("x.json"), None);
        assert_eq!(w.load::<Vec<f64>>("missing.json"), None);
    }

    #[test]
    fn csv_carries_hash_and_manifest_lists_files() {
        let d = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(d.path(), "cafe", "value", 7).unwrap();
        w.csv("v.csv", |out| writeln!(out, "a,b")).unwrap();
        w.depend("solve-boundary", false);
        let m = w.finish().unwrap();
        let text = fs::read_to_string(d.path().join("v.csv")).unwrap();
        assert!(text.starts_with("# config_hash: cafe\na,b"));
        assert_eq!(m.artifacts[0].file, "v.csv");
        assert_eq!(m.dependencies[0].action, "auto_run");
        assert!(d.path().join("value.manifest.json").exists());
    }
}
