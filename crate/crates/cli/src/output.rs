//! Output directory bookkeeping: CSV tables, their digests and the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Stage};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Collects files written into one output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Renders into memory first so the digest is of exactly the bytes on disk.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.files.retain(|f| f.file != name);
        self.files.push(OutputFile { file: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, stage: &'static str, render: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> difflab_core::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf).stage(stage)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> CliResult<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| CliError::Config(format!("{name}: {e}"));
            w.write_record(&table.headers).map_err(io)?;
            for row in &table.rows {
                w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
            }
            w.flush().map_err(|e| CliError::io(self.path(name), e))?;
        }
        self.write_bytes(name, &buf)
    }

    /// Writes `manifest.json`: config echo, tool versions, seed and the
    /// digest of every file written so far.
    pub fn finish(self, config: &ExperimentConfig, label: &str) -> CliResult<Vec<OutputFile>> {
        #[derive(Serialize)]
        struct Versions {
            difflab: &'static str,
            #[serde(rename = "difflab-core")]
            core: &'static str,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            experiment: &'a str,
            seed: u64,
            versions: Versions,
            config: &'a ExperimentConfig,
            outputs: &'a [OutputFile],
        }
        let manifest = Manifest {
            experiment: label,
            seed: config.seed,
            versions: Versions { difflab: env!("CARGO_PKG_VERSION"), core: difflab_core::VERSION },
            config,
            outputs: &self.files,
        };
        let path = self.path(MANIFEST);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| CliError::Config(e.to_string()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        Ok(self.files)
    }
}

/// Column-named numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

/// `prefix_0, …, prefix_{d−1}`, or just `prefix` when d = 1 and `bare` is set.
pub fn indexed(prefix: &str, d: usize, bare: bool) -> Vec<String> {
    if d == 1 && bare {
        return vec![prefix.to_string()];
    }
    (0..d).map(|j| format!("{prefix}_{j}")).collect()
}

/// `prefix_ab` for every matrix entry in row-major order.
pub fn matrix_headers(prefix: &str, d: usize) -> Vec<String> {
    (0..d).flat_map(|a| (0..d).map(move |b| format!("{prefix}_{a}{b}"))).collect()
}
