//! Output directories and run manifests.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::io::{write_json, DataError};

/// A run's output directory. Files may only be created through [`OutputDir::file`],
/// which refuses paths that leave the directory. Unless [`OutputDir::commit`]
/// is called, dropping the guard removes every file it handed out, and the
/// directory itself when the guard created it.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, DataError> {
        let created_root = !root.exists();
        std::fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            files: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for a new output file given relative to the root.
    pub fn file(&mut self, relative: &str) -> Result<PathBuf, DataError> {
        let rel = Path::new(relative);
        let escapes = rel.is_absolute()
            || rel.components().any(|c| !matches!(c, Component::Normal(_)))
            || relative.is_empty();
        if escapes {
            return Err(DataError::Format {
                path: rel.to_path_buf(),
                message: "output paths must stay inside the output directory".into(),
            });
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            if !parent.exists() {
                std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
                self.dirs.push(parent.to_path_buf());
            }
        }
        if !self.files.contains(&path) {
            self.files.push(path.clone());
        }
        Ok(path)
    }

    /// Files handed out so far, relative to the root, in creation order.
    pub fn relative_files(&self) -> Vec<String> {
        self.files
            .iter()
            .filter_map(|p| p.strip_prefix(&self.root).ok())
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .collect()
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
        if self.created_root {
            let _ = std::fs::remove_dir(&self.root);
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub experiment: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    /// Data files, excluding the manifest.
    pub files: Vec<FileEntry>,
    /// Command-specific counters.
    pub counters: BTreeMap<String, serde_json::Value>,
}

/// Accumulates manifest fields while a command runs.
pub struct RunClock {
    started: Instant,
    started_unix: u64,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub struct ManifestInfo<'a> {
    pub command: &'a str,
    pub experiment: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub threads: usize,
    pub counters: BTreeMap<String, serde_json::Value>,
}

/// Hashes every file written so far, writes `manifest.json`, and commits.
pub fn finish_run(
    mut out: OutputDir,
    clock: RunClock,
    info: ManifestInfo<'_>,
) -> Result<Manifest, DataError> {
    let mut files = Vec::new();
    for rel in out.relative_files() {
        let path = out.root().join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        files.push(FileEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        tool: "attnpool".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: info.command.into(),
        experiment: info.experiment.into(),
        seed: info.seed,
        config_hash: info.config_hash,
        threads: info.threads,
        started_unix_seconds: clock.started_unix,
        wall_clock_seconds: clock.started.elapsed().as_secs_f64(),
        files,
        counters: info.counters,
    };
    let path = out.file("manifest.json")?;
    write_json(&path, &manifest)?;
    out.commit();
    Ok(manifest)
}
