//! Result files: CSV tables, JSON reports, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug)]
pub struct IoError(pub String);

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError(e.to_string())
    }
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        IoError(e.to_string())
    }
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError(e.to_string())
    }
}

/// Single writer for one run directory; records every file for the manifest.
pub struct Sink {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    files: &'a [String],
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self, IoError> {
        fs::create_dir_all(dir).map_err(|e| IoError(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), IoError> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), IoError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json`: resolved configuration and produced files.
    pub fn finish(self, command: &str, config: &RunConfig) -> Result<Vec<String>, IoError> {
        let m = Manifest { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), command, config, files: &self.files };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.files)
    }
}

/// Formats `ε` for file names: `0.05` becomes `0p05`.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p").replace('-', "m")
}
