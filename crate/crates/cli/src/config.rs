use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use webpurge_core::origin::CategoryLists;
use webpurge_core::units::parse_byte_size;

pub const DEFAULT_PASSPHRASE_ENV: &str = "WEBPURGE_PASSPHRASE";

/// A byte count written either as a number or with a unit (`"10GB"`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ByteSize {
    Bytes(u64),
    Text(String),
}

impl ByteSize {
    pub fn bytes(&self) -> Result<u64, String> {
        match self {
            ByteSize::Bytes(n) => Ok(*n),
            ByteSize::Text(s) => parse_byte_size(s).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_dir: Option<PathBuf>,
    pub top_n: usize,
    pub target_free: Option<ByteSize>,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub presume_auth: bool,
    pub allow_auth: bool,
    pub fixture_mode: bool,
    pub categories: CategoryLists,
    /// Environment variable holding the store passphrase.
    pub passphrase_env: String,
    /// HTTP proxy for every fetch.
    pub proxy: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_dir: None,
            top_n: 25,
            target_free: None,
            concurrency: 4,
            timeout_secs: 30,
            presume_auth: true,
            allow_auth: false,
            fixture_mode: false,
            categories: CategoryLists::default(),
            passphrase_env: DEFAULT_PASSPHRASE_ENV.to_string(),
            proxy: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.top_n < 1 {
            return Err("top_n must be at least 1".into());
        }
        if self.concurrency < 1 {
            return Err("concurrency must be at least 1".into());
        }
        if let Some(t) = &self.target_free {
            t.bytes()?;
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        if let Some(d) = &self.store_dir {
            return d.clone();
        }
        let home =
            std::env::var_os("HOME").or_else(|| std::env::var_os("USERPROFILE")).map(PathBuf::from).unwrap_or_default();
        home.join(".webpurge").join("store")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let cfg: Config =
            toml::from_str("top_n = 5\ntarget_free = \"500MB\"\n[categories]\nwebmail = [\"mail.example\"]\n").unwrap();
        assert_eq!(cfg.top_n, 5);
        assert_eq!(cfg.target_free.unwrap().bytes(), Ok(500_000_000));
        assert_eq!(cfg.categories.webmail, ["mail.example"]);
        assert_eq!(cfg.concurrency, 4);
        assert!(cfg.presume_auth);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
        let cfg: Config = toml::from_str("concurrency = 0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: Config = toml::from_str("target_free = \"ten\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: Config = toml::from_str("target_free = 1000").unwrap();
        assert!(cfg.validate().is_ok());
    }
}
