//! Settings from `guardweave.toml`, command-line flags and the environment.
//! Flags override the file; environment variables override both.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use guardweave_core::gateway::backend::{Recorder, Remote, RemoteConfig, Replay, Script, Scripted};
use guardweave_core::gateway::Gateway;
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "guardweave.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_path: PathBuf,
    /// `scripted`, `scripted:<script.json>`, `replay:<cassette.jsonl>`,
    /// `record:<cassette.jsonl>` (remote, recorded) or `remote`.
    pub backend: String,
    pub model_api_base: Option<String>,
    pub port: u16,
    pub auto_resume: bool,
    pub parallelism: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_path: PathBuf::from("guardweave-store"),
            backend: "scripted".into(),
            model_api_base: None,
            port: 8787,
            auto_resume: true,
            parallelism: 4,
        }
    }
}

/// Values given on the command line; `None` leaves the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store_path: Option<PathBuf>,
    pub backend: Option<String>,
    pub model_api_base: Option<String>,
    pub port: Option<u16>,
    pub auto_resume: Option<bool>,
    pub parallelism: Option<usize>,
}

impl Overrides {
    fn apply(self, c: &mut Config) {
        if let Some(v) = self.store_path {
            c.store_path = v;
        }
        if let Some(v) = self.backend {
            c.backend = v;
        }
        if let Some(v) = self.model_api_base {
            c.model_api_base = Some(v);
        }
        if let Some(v) = self.port {
            c.port = v;
        }
        if let Some(v) = self.auto_resume {
            c.auto_resume = v;
        }
        if let Some(v) = self.parallelism {
            c.parallelism = v;
        }
    }
}

fn env_overrides(get: &dyn Fn(&str) -> Option<String>) -> anyhow::Result<Overrides> {
    let parse_bool = |k: &str, v: String| match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("{k}: expected a boolean, got {v:?}"),
    };
    Ok(Overrides {
        store_path: get("GUARDWEAVE_STORE").map(PathBuf::from),
        backend: get("GUARDWEAVE_BACKEND"),
        model_api_base: get("MODEL_API_BASE"),
        port: get("GUARDWEAVE_PORT").map(|v| v.parse().with_context(|| format!("GUARDWEAVE_PORT: bad port {v:?}"))).transpose()?,
        auto_resume: get("GUARDWEAVE_AUTO_RESUME").map(|v| parse_bool("GUARDWEAVE_AUTO_RESUME", v)).transpose()?,
        parallelism: get("GUARDWEAVE_PARALLELISM")
            .map(|v| v.parse().with_context(|| format!("GUARDWEAVE_PARALLELISM: bad count {v:?}")))
            .transpose()?,
    })
}

impl Config {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, or `guardweave.toml` in the working directory when it exists.
    pub fn load(path: Option<&Path>, flags: Overrides) -> anyhow::Result<Self> {
        Self::resolve(path, flags, &|k| std::env::var(k).ok())
    }

    pub fn resolve(path: Option<&Path>, flags: Overrides, env: &dyn Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None if Path::new(CONFIG_FILE).exists() => {
                let text = std::fs::read_to_string(CONFIG_FILE)?;
                Self::from_toml(&text).with_context(|| format!("parsing {CONFIG_FILE}"))?
            }
            None => Config::default(),
        };
        flags.apply(&mut config);
        env_overrides(env)?.apply(&mut config);
        Ok(config)
    }

    pub fn gateway(&self) -> anyhow::Result<Gateway> {
        let remote = || -> anyhow::Result<Remote> {
            let mut cfg = RemoteConfig::from_env().unwrap_or(RemoteConfig {
                api_base: String::new(),
                api_key: std::env::var("MODEL_API_KEY").unwrap_or_default(),
                model: std::env::var("MODEL_NAME").unwrap_or_else(|_| "gpt-4o".into()),
                timeout: std::time::Duration::from_secs(60),
                max_in_flight: self.parallelism.max(1),
            });
            if let Some(base) = &self.model_api_base {
                cfg.api_base = base.clone();
            }
            if cfg.api_base.is_empty() {
                bail!("the remote backend needs model_api_base or MODEL_API_BASE");
            }
            Ok(Remote::new(cfg)?)
        };
        let (kind, arg) = self.backend.split_once(':').unwrap_or((self.backend.as_str(), ""));
        Ok(match (kind, arg) {
            ("scripted", "") => Gateway::sim(),
            ("scripted", path) => Gateway::new(Scripted::new(Script::load(Path::new(path))?)),
            ("replay", path) if !path.is_empty() => Gateway::new(Replay::open(Path::new(path))?),
            ("record", path) if !path.is_empty() => {
                let out = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
                Gateway::new(Recorder::new(Arc::new(remote()?), Box::new(out)))
            }
            ("remote", "") => Gateway::new(remote()?),
            _ => bail!("unknown backend {:?}", self.backend),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_beats_flags_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join(CONFIG_FILE);
        std::fs::write(&file, "port = 9000\nparallelism = 2\nauto_resume = false\n").unwrap();
        let flags = Overrides { port: Some(9100), parallelism: Some(3), ..Default::default() };
        let env = |k: &str| (k == "GUARDWEAVE_PORT").then(|| "9200".to_string());
        let c = Config::resolve(Some(&file), flags, &env).unwrap();
        assert_eq!((c.port, c.parallelism, c.auto_resume), (9200, 3, false));
        assert_eq!(c.backend, "scripted");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("prot = 1").is_err());
    }
}
