use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Everything needed to rerun a command: what was run, on which inputs and
/// with which resolved options.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time: f64,
}

pub struct ManifestBuilder {
    subcommand: String,
    inputs: Vec<String>,
    options: serde_json::Value,
    seed: Option<u64>,
    start: Instant,
    extra: Option<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, options: &impl Serialize, extra: Option<PathBuf>) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            options: serde_json::to_value(options).unwrap_or(serde_json::Value::Null),
            seed: None,
            start: Instant::now(),
            extra,
        }
    }

    pub fn input(&mut self, s: impl Into<String>) {
        self.inputs.push(s.into());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    fn build(&self) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand.clone(),
            inputs: self.inputs.clone(),
            options: self.options.clone(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time: self.start.elapsed().as_secs_f64(),
        }
    }

    fn write_to(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.build())?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// `out.csv` gets `out.csv.manifest.json`.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write_to(Path::new(&name))
    }

    pub fn write_in_dir(&self, dir: &Path) -> Result<()> {
        self.write_to(&dir.join("manifest.json"))
    }

    /// The copy requested with `--manifest`, if any.
    pub fn finish(&self) -> Result<()> {
        match &self.extra {
            Some(p) => self.write_to(p),
            None => Ok(()),
        }
    }
}
