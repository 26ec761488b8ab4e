use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gripforge_core::config::Config;
use serde::{Deserialize, Serialize};

/// Record of one command invocation. Two identical runs differ only in
/// `wall_seconds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        let versions = [
            ("gripforge", env!("CARGO_PKG_VERSION")),
            ("gripforge-core", gripforge_core::VERSION),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
            versions,
        }
    }

    /// Writes the manifest to `path`, or as one line on stderr.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                let mut text = serde_json::to_string_pretty(self)?;
                text.push('\n');
                std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
            }
            None => {
                let mut err = std::io::stderr().lock();
                writeln!(err, "{}", serde_json::to_string(self)?)?;
                Ok(())
            }
        }
    }
}

/// `out.scn` becomes `out.<suffix>`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}
