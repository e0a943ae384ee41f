//! Output directories with a `manifest.json` listing every emitted file and
//! every input by SHA-256.
//!
//! Nothing time-dependent goes into the manifest, so two runs with the same
//! config and inputs produce the same bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct InputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a serde_json::Value,
    inputs: Vec<InputEntry>,
    files: Vec<FileEntry>,
}

pub struct Bundle {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<InputEntry>,
}

impl Bundle {
    /// Refuses a directory that already holds a manifest unless `force`.
    pub fn open(dir: PathBuf, force: bool) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        if manifest.exists() && !force {
            return Err(CliError::RefuseOverwrite(dir));
        }
        Ok(Self {
            dir,
            files: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    /// Record an input file under the name it was given in the config.
    pub fn input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.push(InputEntry {
            path: label.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn finish(self, command: &str, config: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut files = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(io_err(&path))?;
            files.push(FileEntry {
                name: name.clone(),
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: self.inputs,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn refuses_existing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::open(dir.path().to_path_buf(), false).unwrap();
        b.add("a.txt", "x");
        b.finish("test", &serde_json::json!({})).unwrap();
        assert!(matches!(
            Bundle::open(dir.path().to_path_buf(), false),
            Err(CliError::RefuseOverwrite(_))
        ));
        assert!(Bundle::open(dir.path().to_path_buf(), true).is_ok());
    }
}
