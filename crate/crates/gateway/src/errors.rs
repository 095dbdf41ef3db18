//! Stable, machine-readable names for failure classes.

use quill_core::corpus::CorpusError;
use quill_core::evalharness::EvalError;
use quill_core::introgen::IntroChainError;
use quill_core::providers::{ProviderError, TemplateSetError};
use quill_core::recommend::RecommendError;
use quill_core::vectorindex::IndexError;

use crate::config::ConfigError;
use crate::engine::SetupError;

/// An error that already knows its class.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Classified {
    pub class: &'static str,
    pub message: String,
}

impl Classified {
    pub fn new(class: &'static str, message: impl Into<String>) -> Self {
        Classified { class, message: message.into() }
    }
}

fn provider_class(e: &ProviderError) -> &'static str {
    match e {
        ProviderError::Config(_) => "provider_misconfigured",
        ProviderError::Capability(_) => "provider_capability",
        _ => "provider_failed",
    }
}

fn recommend_class(e: &RecommendError) -> &'static str {
    match e {
        RecommendError::Input(_) => "invalid_input",
        RecommendError::Template(_) => "template_error",
        RecommendError::Index { .. } => "index_error",
        RecommendError::Capability(_) => "provider_capability",
        RecommendError::Provider { source, .. } => provider_class(source),
        _ => "provider_failed",
    }
}

/// Class of the first recognised error in the chain.
pub fn classify(err: &(dyn std::error::Error + 'static)) -> &'static str {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = cur {
        if let Some(c) = e.downcast_ref::<Classified>() {
            return c.class;
        }
        if let Some(s) = e.downcast_ref::<SetupError>() {
            return match s {
                SetupError::Config(c) => config_class(c),
                SetupError::ProviderUnconfigured => "provider_unconfigured",
                SetupError::Provider(p) => provider_class(p),
                SetupError::Templates(_) => "template_error",
                SetupError::Corpus { .. } => "corpus_error",
                SetupError::Index { .. } | SetupError::DimensionMismatch { .. } => "index_error",
                SetupError::Library(r) => recommend_class(r),
            };
        }
        if let Some(c) = e.downcast_ref::<ConfigError>() {
            return config_class(c);
        }
        if let Some(r) = e.downcast_ref::<RecommendError>() {
            return recommend_class(r);
        }
        if let Some(i) = e.downcast_ref::<IntroChainError>() {
            return match &i.provider {
                Some(p) => provider_class(p),
                None => "intro_failed",
            };
        }
        if let Some(p) = e.downcast_ref::<ProviderError>() {
            return provider_class(p);
        }
        if e.downcast_ref::<IndexError>().is_some() {
            return "index_error";
        }
        if e.downcast_ref::<CorpusError>().is_some() {
            return "corpus_error";
        }
        if e.downcast_ref::<EvalError>().is_some() {
            return "eval_error";
        }
        if e.downcast_ref::<TemplateSetError>().is_some() {
            return "template_error";
        }
        if e.downcast_ref::<std::io::Error>().is_some() {
            return "io_error";
        }
        cur = e.source();
    }
    "error"
}

fn config_class(c: &ConfigError) -> &'static str {
    match c {
        ConfigError::MissingPath { .. } => "config_missing_path",
        ConfigError::Unset { .. } => "config_unset",
        _ => "config_invalid",
    }
}

/// `error <class>: <message>` on one line.
pub fn one_line(err: &anyhow::Error) -> String {
    let class = classify(err.as_ref());
    let message = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("error {class}: {message}")
}
