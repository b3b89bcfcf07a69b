// SPDX-License-Identifier: Apache-2.0

//! Output directory handling: header comments, tabular files in the chosen
//! format and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Provenance stamped into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool_version: String,
    pub command_line: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command_line: String, seed: u64) -> Self {
        Self {
            tool_version: format!("piezoloss {TOOL_VERSION}"),
            command_line,
            seed,
        }
    }

    fn comment_lines(&self) -> String {
        format!(
            "# {}\n# command: {}\n# seed: {}\n",
            self.tool_version, self.command_line, self.seed
        )
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    input_paths: &'a [PathBuf],
    output_dir: &'a Path,
    outputs: &'a [PathBuf],
    seed: u64,
    tool_version: &'a str,
    command_line: &'a str,
    created_unix_s: u64,
}

/// One command's output directory.
pub struct Run {
    command: &'static str,
    dir: PathBuf,
    header: Header,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub format: Format,
}

impl Run {
    pub fn create(command: &'static str, dir: &Path, header: Header, format: Format) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            command,
            dir: dir.to_path_buf(),
            header,
            inputs: Vec::new(),
            outputs: Vec::new(),
            format,
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn seed(&self) -> u64 {
        self.header.seed
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// CSV file whose body comes from `body`, preceded by the header comments.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = self.header.comment_lines().into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// JSON file `{"header": ..., "data": value}`.
    pub fn json(&mut self, name: &str, value: Value) -> Result<PathBuf> {
        let doc = json!({ "header": self.header, "data": value });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Tabular output in the run's format: `<stem>.csv` or `<stem>.json`.
    pub fn table<F>(&mut self, stem: &str, csv_body: F, json_value: impl FnOnce() -> Value) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        match self.format {
            Format::Csv => self.csv(&format!("{stem}.csv"), csv_body),
            Format::Json => self.json(&format!("{stem}.json"), json_value()),
        }
    }

    /// Writes the manifest; the timestamp lives only here.
    pub fn finish(mut self) -> Result<PathBuf> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            command: self.command,
            input_paths: &self.inputs,
            output_dir: &self.dir,
            outputs: &self.outputs,
            seed: self.header.seed,
            tool_version: &self.header.tool_version,
            command_line: &self.header.command_line,
            created_unix_s: created,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }
}

/// Column-oriented JSON object from named columns.
pub fn columns(cols: &[(&str, Vec<f64>)]) -> Value {
    Value::Object(cols.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}
