//! Service configuration: a flat TOML file, environment overrides, defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variables that override file values.
pub const ENV_KEYS: [&str; 5] = ["PROVIDER_URL", "PROVIDER_KEY", "EMBED_URL", "EMBED_KEY", "TEMPLATE_DIR"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config key '{key}': path does not exist: {path}")]
    MissingPath { key: &'static str, path: String },
    #[error("config key '{key}' is not set")]
    Unset { key: &'static str },
    #[error("config key '{key}': {message}")]
    Invalid { key: &'static str, message: String },
}

/// File layout. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    corpus: Vec<PathBuf>,
    index: Option<PathBuf>,
    template_dir: Option<PathBuf>,
    provider_url: Option<String>,
    provider_key: Option<String>,
    embed_url: Option<String>,
    embed_key: Option<String>,
    embed_dimension: Option<usize>,
    hash_dimension: Option<usize>,
    k: Option<usize>,
    max_suggestions: Option<usize>,
    y_years: Option<u32>,
    keep_fraction: Option<f64>,
    listen: Option<String>,
    parallelism: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Endpoint {
    pub url: String,
    #[serde(skip)]
    pub key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceConfig {
    /// Record stores loaded as the corpus, in order.
    pub corpus: Vec<PathBuf>,
    pub index: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub provider: Option<Endpoint>,
    pub embed: Option<Endpoint>,
    /// Known dimension of the embedding endpoint; probed when unset.
    pub embed_dimension: Option<usize>,
    /// Dimension of the built-in hashing embedder used without an endpoint.
    pub hash_dimension: usize,
    pub k: usize,
    pub max_suggestions: usize,
    pub y_years: u32,
    pub keep_fraction: f64,
    pub listen: SocketAddr,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            corpus: Vec::new(),
            index: None,
            template_dir: None,
            provider: None,
            embed: None,
            embed_dimension: None,
            hash_dimension: 256,
            k: 10,
            max_suggestions: 10,
            y_years: 5,
            keep_fraction: 0.5,
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            parallelism: 8,
            seed: 0,
        }
    }
}

fn nonempty(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.trim().is_empty())
}

impl ServiceConfig {
    /// Loads `path` (if any) and applies overrides from `env`. Relative
    /// paths in the file are taken relative to the file's directory.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.display().to_string(),
                    message: e.message().to_string(),
                })?;
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        Self::resolve(file, &base, env)
    }

    pub fn from_toml(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.message().to_string(),
        })?;
        Self::resolve(file, Path::new(""), env)
    }

    fn resolve(file: FileConfig, base: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let d = ServiceConfig::default();
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let provider_url = nonempty(env("PROVIDER_URL")).or(nonempty(file.provider_url));
        let provider_key = nonempty(env("PROVIDER_KEY")).or(nonempty(file.provider_key));
        let embed_url = nonempty(env("EMBED_URL")).or(nonempty(file.embed_url));
        let embed_key = nonempty(env("EMBED_KEY")).or(nonempty(file.embed_key));
        let template_dir = match nonempty(env("TEMPLATE_DIR")) {
            Some(dir) => Some(PathBuf::from(dir)),
            None => file.template_dir.map(rel),
        };
        let listen = match file.listen {
            Some(s) => s.parse().map_err(|e| ConfigError::Invalid {
                key: "listen",
                message: format!("'{s}': {e}"),
            })?,
            None => d.listen,
        };
        let cfg = ServiceConfig {
            corpus: file.corpus.into_iter().map(rel).collect(),
            index: file.index.map(rel),
            template_dir,
            provider: provider_url.map(|url| Endpoint { url, key: provider_key }),
            embed: embed_url.map(|url| Endpoint { url, key: embed_key }),
            embed_dimension: file.embed_dimension,
            hash_dimension: file.hash_dimension.unwrap_or(d.hash_dimension),
            k: file.k.unwrap_or(d.k),
            max_suggestions: file.max_suggestions.unwrap_or(d.max_suggestions),
            y_years: file.y_years.unwrap_or(d.y_years),
            keep_fraction: file.keep_fraction.unwrap_or(d.keep_fraction),
            listen,
            parallelism: file.parallelism.unwrap_or(d.parallelism),
            seed: file.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key, v: usize| {
            if v == 0 {
                Err(ConfigError::Invalid { key, message: "must be positive".into() })
            } else {
                Ok(())
            }
        };
        positive("k", self.k)?;
        positive("max_suggestions", self.max_suggestions)?;
        positive("parallelism", self.parallelism)?;
        positive("hash_dimension", self.hash_dimension)?;
        if let Some(d) = self.embed_dimension {
            positive("embed_dimension", d)?;
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return Err(ConfigError::Invalid {
                key: "keep_fraction",
                message: format!("{} is outside [0, 1]", self.keep_fraction),
            });
        }
        Ok(())
    }

    /// Fails with the offending key unless every configured path exists.
    /// Used at service startup; single commands check only what they use.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        for p in &self.corpus {
            exists("corpus", p)?;
        }
        if let Some(p) = &self.index {
            exists("index", p)?;
        }
        if let Some(p) = &self.template_dir {
            exists("template_dir", p)?;
        }
        Ok(())
    }

    pub fn index_path(&self) -> Result<&Path, ConfigError> {
        let p = self.index.as_deref().ok_or(ConfigError::Unset { key: "index" })?;
        exists("index", p)?;
        Ok(p)
    }

    pub fn corpus_paths(&self) -> Result<&[PathBuf], ConfigError> {
        if self.corpus.is_empty() {
            return Err(ConfigError::Unset { key: "corpus" });
        }
        for p in &self.corpus {
            exists("corpus", p)?;
        }
        Ok(&self.corpus)
    }
}

fn exists(key: &'static str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { key, path: p.display().to_string() })
    }
}
