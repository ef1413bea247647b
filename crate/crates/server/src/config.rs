use std::path::PathBuf;

use basinfo_core::geodata::DEFAULT_ASSET_LIMIT;
use serde::Deserialize;

use crate::auth::DEFAULT_ITERATIONS;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data_dir: PathBuf,
    /// HMAC key for session tokens; a random key is used when absent, so
    /// tokens do not survive a restart.
    pub secret: Option<String>,
    pub port: u16,
    pub pbkdf2_iterations: u32,
    pub asset_limit: u64,
}

impl Config {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            secret: None,
            port: DEFAULT_PORT,
            pbkdf2_iterations: DEFAULT_ITERATIONS,
            asset_limit: DEFAULT_ASSET_LIMIT,
        }
    }

    /// File values first, then `BASINFO_*` variables from `env` on top.
    pub fn resolve(file: ConfigFile, env: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let data_dir = env("BASINFO_DATA_DIR")
            .map(PathBuf::from)
            .or(file.data_dir)
            .ok_or("no data directory: set BASINFO_DATA_DIR or data_dir")?;
        let mut cfg = Config::new(data_dir);
        cfg.secret = env("BASINFO_SECRET").or(file.secret);
        cfg.port = parse_var(&env, "BASINFO_PORT")?.or(file.port).unwrap_or(DEFAULT_PORT);
        cfg.pbkdf2_iterations = parse_var(&env, "BASINFO_PBKDF2_ITERATIONS")?
            .or(file.pbkdf2_iterations)
            .unwrap_or(DEFAULT_ITERATIONS);
        cfg.asset_limit = parse_var(&env, "BASINFO_ASSET_LIMIT")?
            .or(file.asset_limit)
            .unwrap_or(DEFAULT_ASSET_LIMIT);
        if cfg.pbkdf2_iterations == 0 {
            return Err("pbkdf2 iterations must be positive".into());
        }
        Ok(cfg)
    }
}

fn parse_var<T: std::str::FromStr>(env: &impl Fn(&str) -> Option<String>, key: &str) -> Result<Option<T>, String> {
    match env(key) {
        None => Ok(None),
        Some(v) => v.trim().parse().map(Some).map_err(|_| format!("{key}: cannot parse '{v}'")),
    }
}

/// Optional configuration file; keys mirror the environment variables.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub data_dir: Option<PathBuf>,
    pub secret: Option<String>,
    pub port: Option<u16>,
    pub pbkdf2_iterations: Option<u32>,
    pub asset_limit: Option<u64>,
}
