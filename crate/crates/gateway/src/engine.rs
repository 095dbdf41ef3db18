//! Assembles providers, templates, corpus and index from a configuration.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use quill_core::corpus::{parse_works, Corpus, CorpusError, Work};
use quill_core::offline::OfflineLlm;
use quill_core::providers::mock::HashEmbedder;
use quill_core::providers::{
    Embedder, HttpEmbedder, HttpEndpoint, HttpLlm, LanguageModel, ProviderError, RetryPolicy, Retrying,
    TemplateSet, TemplateSetError,
};
use quill_core::recommend::{Library, RecommendError};
use quill_core::vectorindex::{load_index, IndexError};
use thiserror::Error;

use crate::config::{ConfigError, Endpoint, ServiceConfig};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no language model configured; set PROVIDER_URL or use --llm offline")]
    ProviderUnconfigured,
    #[error("provider setup: {0}")]
    Provider(#[from] ProviderError),
    #[error("templates: {0}")]
    Templates(#[from] TemplateSetError),
    #[error("reading {path}: {source}")]
    Corpus { path: String, source: CorpusError },
    #[error("index {path}: {source}")]
    Index { path: String, source: IndexError },
    #[error("index has dimension {index} but the embedder produces {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error(transparent)]
    Library(#[from] RecommendError),
}

/// Which language model backs generation and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LlmMode {
    #[default]
    Http,
    /// The deterministic word-overlap model; no server needed.
    Offline,
}

fn endpoint(e: &Endpoint) -> HttpEndpoint {
    HttpEndpoint::new(e.url.clone(), e.key.clone())
}

pub fn language_model(config: &ServiceConfig, mode: LlmMode) -> Result<Arc<dyn LanguageModel>, SetupError> {
    match (mode, &config.provider) {
        (LlmMode::Offline, _) => Ok(Arc::new(OfflineLlm)),
        (LlmMode::Http, None) => Err(SetupError::ProviderUnconfigured),
        (LlmMode::Http, Some(e)) => {
            let llm = HttpLlm::new(endpoint(e), config.parallelism)?;
            Ok(Arc::new(Retrying::new(llm, RetryPolicy::default())))
        }
    }
}

/// The configured embedding endpoint, or the hashing embedder without one.
pub fn embedder(config: &ServiceConfig) -> Result<Arc<dyn Embedder>, SetupError> {
    match &config.embed {
        None => Ok(Arc::new(HashEmbedder::new(config.hash_dimension, 0))),
        Some(e) => {
            let http = match config.embed_dimension {
                Some(d) => HttpEmbedder::new(endpoint(e), d, config.parallelism)?,
                None => HttpEmbedder::probe(endpoint(e), config.parallelism)?,
            };
            Ok(Arc::new(Retrying::new(http, RetryPolicy::default())))
        }
    }
}

pub fn templates(config: &ServiceConfig) -> Result<TemplateSet, SetupError> {
    Ok(match &config.template_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    })
}

/// Reads record stores in order, returning the works and the number of
/// records skipped. A work id seen in an earlier file wins.
pub fn read_works(paths: &[PathBuf]) -> Result<(Vec<Work>, usize), SetupError> {
    let mut seen = HashSet::new();
    let mut works = Vec::new();
    let mut skipped = 0;
    for p in paths {
        let corpus_err = |source| SetupError::Corpus { path: p.display().to_string(), source };
        let file = File::open(p).map_err(|e| corpus_err(CorpusError::Io(e)))?;
        let parsed = parse_works(BufReader::new(file)).map_err(corpus_err)?;
        skipped += parsed.skip_count();
        if parsed.skip_count() > 0 {
            tracing::warn!(path = %p.display(), skipped = parsed.skip_count(), "skipped unreadable records");
        }
        for w in parsed.works {
            if seen.insert(w.id.clone()) {
                works.push(w);
            } else {
                tracing::warn!(id = %w.id, path = %p.display(), "duplicate work id ignored");
                skipped += 1;
            }
        }
    }
    Ok((works, skipped))
}

pub fn load_corpus(paths: &[PathBuf]) -> Result<Corpus, SetupError> {
    Corpus::new(read_works(paths)?.0).map_err(|source| SetupError::Corpus { path: "corpus".into(), source })
}

pub fn load_library(corpus_paths: &[PathBuf], index_path: &Path, embedder: &dyn Embedder) -> Result<Library, SetupError> {
    let corpus = load_corpus(corpus_paths)?;
    let index = load_index(index_path).map_err(|source| SetupError::Index {
        path: index_path.display().to_string(),
        source,
    })?;
    if index.dimension() != embedder.dimension() {
        return Err(SetupError::DimensionMismatch {
            index: index.dimension(),
            embedder: embedder.dimension(),
        });
    }
    Ok(Library::new(corpus, index)?)
}

/// Everything a request needs; immutable once built and shared across
/// requests.
pub struct Engine {
    pub config: ServiceConfig,
    pub library: Library,
    pub llm: Arc<dyn LanguageModel>,
    pub embedder: Arc<dyn Embedder>,
    pub templates: TemplateSet,
}

impl Engine {
    pub fn from_config(config: ServiceConfig, mode: LlmMode) -> Result<Self, SetupError> {
        config.check_paths()?;
        let llm = language_model(&config, mode)?;
        let embedder = embedder(&config)?;
        let templates = templates(&config)?;
        let library = load_library(config.corpus_paths()?, config.index_path()?, &*embedder)?;
        Ok(Engine { config, library, llm, embedder, templates })
    }
}
