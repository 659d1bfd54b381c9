use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written into its output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub master_seed: Option<u64>,
    pub threads: usize,
    pub started: String,
    pub finished: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: Value, inputs: Vec<PathBuf>, master_seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs,
            outputs: Vec::new(),
            master_seed,
            threads: rayon::current_num_threads(),
            started: now(),
            finished: String::new(),
        }
    }

    pub fn finish(mut self, out_dir: &Path, outputs: Vec<PathBuf>) -> Result<()> {
        self.outputs = outputs;
        self.finished = now();
        std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}
