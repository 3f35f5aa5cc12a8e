//! Artifact collection and the single writer into the output directory.

use std::path::{Path, PathBuf};

use kdvb_core::io::{write_snapshot, CsvTable};
use kdvb_core::Field;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Files produced by one run, kept in memory until the run completes.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn csv(&mut self, name: &str, table: &CsvTable) {
        self.bytes(name, table.to_csv().into_bytes());
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("serialisable artifact");
        text.push('\n');
        self.bytes(name, text.into_bytes());
    }

    pub fn snapshot(&mut self, name: &str, states: &[Field]) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_snapshot(states, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        self.bytes(name, buf);
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, data: Vec<u8>) {
        assert!(is_plain_name(name), "artifact name {name:?} must be a plain file name");
        assert!(name != MANIFEST, "artifact name {name:?} is reserved");
        assert!(self.get(name).is_none(), "artifact {name:?} written twice");
        self.files.push((name.to_string(), data));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn digests(&self) -> Vec<FileDigest> {
        self.files
            .iter()
            .map(|(name, data)| FileDigest {
                name: name.clone(),
                bytes: data.len(),
                sha256: hex(&Sha256::digest(data)),
            })
            .collect()
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (name, data) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, data).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn is_plain_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\'])
        && Path::new(name).file_name().is_some_and(|f| f == name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Provenance record written next to the artifacts.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub version: &'a str,
    pub wall_time_s: f64,
    pub threads: usize,
    pub files: Vec<FileDigest>,
    pub config: &'a serde_json::Value,
}
