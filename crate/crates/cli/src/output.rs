use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Writes files into the output directory, each stamped with the hash of the
/// resolved configuration.
pub struct Outputs {
    dir: PathBuf,
    hash: String,
}

impl Outputs {
    /// Creates the directory and writes the resolved configuration into it.
    /// The stamp hashes that configuration with `output_dir` cleared, so the
    /// same inputs give the same files wherever they are written.
    pub fn create(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        let text = cfg.to_toml()?;
        let location_free = ScenarioConfig { output_dir: PathBuf::new(), ..cfg.clone() };
        let hash = hex::encode(Sha256::digest(location_free.to_toml()?.as_bytes()));
        fs::create_dir_all(&cfg.output_dir)?;
        fs::write(cfg.output_dir.join(RESOLVED_CONFIG), &text)?;
        Ok(Outputs { dir: cfg.output_dir.clone(), hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> ddquad::Result<()>) -> Result<(), CliError> {
        let mut buf = format!("# config_sha256: {}\n", self.hash).into_bytes();
        write(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let body = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "config_sha256": self.hash,
            "result": value,
        });
        let mut text = serde_json::to_string_pretty(&body).map_err(ddquad::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), CliError> {
        self.write(name, format!("# config_sha256: {}\n{body}", self.hash).as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.path(name), bytes)?;
        Ok(())
    }
}
