use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const SEED_ENV: &str = "SALFORGE_SEED";

/// Where the effective seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Env,
    Config,
}

/// Applies the precedence flag > `SALFORGE_SEED` > config.
pub fn resolve_seed(flag: Option<u64>, config: u64) -> CliResult<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(|s| (s, SeedSource::Env)).map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })
        }
        Err(_) => Ok((config, SeedSource::Config)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub salforge: String,
}

/// Written into every output directory; holds enough to rerun the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// The fully resolved configuration, after flag and environment overrides.
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Absent for commands that only read a trained model.
    pub seed_source: Option<SeedSource>,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub status: String,
    pub error: Option<String>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("json value serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        seed_source: Option<SeedSource>,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_hash: config_hash(&config),
            config,
            seeds,
            seed_source,
            versions: Versions {
                salforge: env!("CARGO_PKG_VERSION").to_string(),
            },
            outputs: Vec::new(),
            status: "ok".into(),
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(RUN_MANIFEST);
        std::fs::create_dir_all(dir).map_err(|e| salforge::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let text = serde_json::to_string_pretty(self).map_err(salforge::Error::from)? + "\n";
        std::fs::write(&path, text).map_err(|e| salforge::Error::Io { path, source: e })?;
        Ok(())
    }
}
