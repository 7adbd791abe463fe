//! Output directory handling and provenance sidecars.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    outputs: &'a [OutputEntry],
}

/// Writes plain file names into one directory and records their hashes.
pub struct OutputDir {
    dir: PathBuf,
    command: String,
    seed: u64,
    config_hash: String,
    written: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, seed: u64, config_json: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            config_hash: sha256_hex(config_json.as_bytes()),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(CliError::Runtime(format!("refusing to write `{name}`")));
        }
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.written.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Write `<command>.provenance.json` describing everything written so far.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let prov = Provenance {
            tool: "refinery",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            seed: self.seed,
            config_hash: &self.config_hash,
            outputs: &self.written,
        };
        let mut text = serde_json::to_string_pretty(&prov).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(format!("{}.provenance.json", self.command));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
