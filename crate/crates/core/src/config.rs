//! Service configuration, loaded from TOML. Keys are addressed by their
//! dotted path, e.g. `store.log_path` or `exec.timeout_s`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: StoreConfig,
    pub exec: ExecConfig,
    pub server: ServerConfig,
    pub auth: AuthConfig,
    pub prov: ProvConfig,
    pub lfn: LfnConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    /// Event log file; the store is memory-only when unset.
    pub log_path: Option<PathBuf>,
    pub fsync: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecKind {
    Local,
    #[default]
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    pub kind: ExecKind,
    pub timeout_s: f64,
    pub max_attempts: u32,
    /// Maximum concurrently executing jobs.
    pub capacity: usize,
    pub sim: SimConfig,
    pub local: LocalConfig,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            kind: ExecKind::Sim,
            timeout_s: 3600.0,
            max_attempts: 1,
            capacity: 4,
            sim: SimConfig::default(),
            local: LocalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Probability that a job fails.
    pub failure_rate: f64,
    pub min_latency_ms: u64,
    pub max_latency_ms: u64,
    /// Real seconds slept per simulated second; 0 runs instantly.
    pub time_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            failure_rate: 0.0,
            min_latency_ms: 50,
            max_latency_ms: 500,
            time_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    /// Per-job working directories are created below this path.
    pub work_dir: PathBuf,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub users: Vec<UserEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvConfig {
    pub prefix: String,
    pub base_uri: String,
}

impl Default for ProvConfig {
    fn default() -> Self {
        ProvConfig {
            prefix: "pb".into(),
            base_uri: "https://provbase.example.org/ns#".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfnConfig {
    pub scheme: String,
    pub root: String,
}

impl Default for LfnConfig {
    fn default() -> Self {
        LfnConfig {
            scheme: "lfn://".into(),
            root: "provbase".into(),
        }
    }
}
