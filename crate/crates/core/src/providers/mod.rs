//! Model backends behind one interface: text generation, continuation
//! scoring and embedding. HTTP clients talk to real model servers; the
//! scripted mocks in [`mock`] make every pipeline testable offline.

mod http;
pub mod mock;
mod retry;
mod template;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorindex::EmbeddingVector;

pub use http::{HttpEmbedder, HttpEndpoint, HttpLlm, Limiter, DEFAULT_PARALLELISM};
pub use retry::{with_retry, RetryPolicy, Retrying, Sleeper};
pub use template::{PromptTemplate, TemplateError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {message}")]
    Server { status: u16, message: String },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("provider lacks capability: {0}")]
    Capability(String),
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
}

impl ProviderError {
    /// Transport failures and 5xx responses are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Server { status, .. } => (500..600).contains(status),
            _ => false,
        }
    }

    pub fn is_capability(&self) -> bool {
        match self {
            ProviderError::Capability(_) => true,
            ProviderError::RetriesExhausted { last, .. } => last.is_capability(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl GenerationRequest {
    /// Greedy request with a 1024-token cap.
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_tokens: 1024,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    /// The mock had no script for this prompt and echoed it back.
    MockFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub continuation: String,
    /// Sum of token log probabilities of the continuation given the prompt.
    pub logprob: f64,
}

pub trait LanguageModel: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError>;

    /// One score per continuation, in input order, from a single inference
    /// pass per continuation.
    fn score_continuations(
        &self,
        _prompt: &str,
        _continuations: &[String],
    ) -> Result<Vec<ContinuationScore>, ProviderError> {
        Err(ProviderError::Capability(
            "this backend cannot score continuations".into(),
        ))
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        (**self).generate(request)
    }

    fn score_continuations(&self, prompt: &str, continuations: &[String]) -> Result<Vec<ContinuationScore>, ProviderError> {
        (**self).score_continuations(prompt, continuations)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Validating front for [`LanguageModel::generate`].
pub fn generate(llm: &dyn LanguageModel, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
    if request.prompt.trim().is_empty() {
        return Err(ProviderError::InvalidInput("prompt must not be empty".into()));
    }
    llm.generate(request)
}

/// Validating front for [`LanguageModel::score_continuations`]: checks the
/// input is non-empty and distinct, and that the backend answered every
/// continuation, in order, with a finite score.
pub fn score_continuations(
    llm: &dyn LanguageModel,
    prompt: &str,
    continuations: &[String],
) -> Result<Vec<ContinuationScore>, ProviderError> {
    if continuations.is_empty() {
        return Err(ProviderError::InvalidInput("no continuations to score".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = continuations.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(ProviderError::InvalidInput(format!("duplicate continuation '{dup}'")));
    }
    let scores = llm.score_continuations(prompt, continuations)?;
    if scores.len() != continuations.len() {
        return Err(ProviderError::InvalidResponse(format!(
            "expected {} scores, got {}",
            continuations.len(),
            scores.len()
        )));
    }
    for (want, got) in continuations.iter().zip(&scores) {
        if &got.continuation != want {
            return Err(ProviderError::InvalidResponse(format!(
                "score for '{}' returned out of order (got '{}')",
                want, got.continuation
            )));
        }
        if !got.logprob.is_finite() {
            return Err(ProviderError::InvalidResponse(format!("non-finite score for '{want}'")));
        }
    }
    Ok(scores)
}

/// Validating front for [`Embedder::embed`].
pub fn embed(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidInput("no texts to embed".into()));
    }
    let vectors = embedder.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::InvalidResponse(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let dim = embedder.dimension();
    if let Some(v) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(ProviderError::Config(format!(
            "embedder declared dimension {dim} but returned {}",
            v.dimension()
        )));
    }
    Ok(vectors)
}

/// Names of the prompt templates, in the order they are used.
pub mod names {
    pub const CITE_FABRICATE: &str = "cite_fabricate";
    pub const CITE_SCORE: &str = "cite_score";
    pub const CITE_PAIRWISE: &str = "cite_pairwise";
    pub const INTRO_NOVELTY: &str = "intro_novelty";
    pub const INTRO_SUMMARIZE: &str = "intro_summarize";
    pub const INTRO_COMPOSE: &str = "intro_compose";
    pub const EVAL_CLAIMS: &str = "eval_claims";
    pub const EVAL_ENTAILMENT: &str = "eval_entailment";

    pub const ALL: [&str; 8] = [
        CITE_FABRICATE,
        CITE_SCORE,
        CITE_PAIRWISE,
        INTRO_NOVELTY,
        INTRO_SUMMARIZE,
        INTRO_COMPOSE,
        EVAL_CLAIMS,
        EVAL_ENTAILMENT,
    ];
}

const BUILTIN: [(&str, &str); 8] = [
    (names::CITE_FABRICATE, include_str!("../../templates/cite_fabricate.jinja")),
    (names::CITE_SCORE, include_str!("../../templates/cite_score.jinja")),
    (names::CITE_PAIRWISE, include_str!("../../templates/cite_pairwise.jinja")),
    (names::INTRO_NOVELTY, include_str!("../../templates/intro_novelty.jinja")),
    (names::INTRO_SUMMARIZE, include_str!("../../templates/intro_summarize.jinja")),
    (names::INTRO_COMPOSE, include_str!("../../templates/intro_compose.jinja")),
    (names::EVAL_CLAIMS, include_str!("../../templates/eval_claims.jinja")),
    (names::EVAL_ENTAILMENT, include_str!("../../templates/eval_entailment.jinja")),
];

/// Drops a single trailing newline, as Jinja does by default.
fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

#[derive(Debug, Error)]
pub enum TemplateSetError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown template '{0}'")]
    Unknown(String),
}

/// The full set of prompt templates, keyed by name.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| {
                let t = PromptTemplate::parse(*name, strip_final_newline(body))
                    .expect("built-in templates parse");
                (name.to_string(), t)
            })
            .collect();
        TemplateSet { templates }
    }

    /// Built-in templates overridden by any `<name>.jinja` file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateSetError> {
        let mut set = Self::builtin();
        for name in names::ALL {
            let path = dir.join(format!("{name}.jinja"));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|source| TemplateSetError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.templates
                .insert(name.to_string(), PromptTemplate::parse(name, strip_final_newline(&body))?);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateSetError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateSetError::Unknown(name.to_string()))
    }

    /// Renders a template by name from a `json!` object.
    pub fn render(&self, name: &str, vars: &serde_json::Value) -> Result<String, TemplateSetError> {
        Ok(self.get(name)?.render_value(vars)?)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::ScriptedLlm;
    use super::*;

    #[test]
    fn builtin_templates_all_parse() {
        let set = TemplateSet::builtin();
        for name in names::ALL {
            assert!(!set.get(name).unwrap().body().ends_with('\n'), "{name}");
        }
    }

    #[test]
    fn template_dir_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("eval_claims.jinja"), "Claims of {{ introduction }}\n").unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        let out = set
            .render(names::EVAL_CLAIMS, &serde_json::json!({"introduction": "x"}))
            .unwrap();
        assert_eq!(out, "Claims of x");
        assert!(set.get(names::CITE_SCORE).unwrap().body().contains("CITATIONS"));
    }

    #[test]
    fn score_validation() {
        let llm = ScriptedLlm::new(1).scores([("a1b2", -0.1), ("c3d4", -2.3)]);
        let conts = vec!["a1b2".to_string(), "c3d4".to_string()];
        let s = score_continuations(&llm, "p", &conts).unwrap();
        assert_eq!(s[0].logprob, -0.1);
        assert_eq!(s[1].logprob, -2.3);
        assert!(matches!(score_continuations(&llm, "p", &[]), Err(ProviderError::InvalidInput(_))));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(score_continuations(&llm, "p", &dup), Err(ProviderError::InvalidInput(_))));
    }

    #[test]
    fn retryable_classification() {
        assert!(ProviderError::Transport("x".into()).is_retryable());
        assert!(ProviderError::Server { status: 503, message: String::new() }.is_retryable());
        assert!(!ProviderError::Server { status: 429, message: String::new() }.is_retryable());
        assert!(!ProviderError::Rejected("x".into()).is_retryable());
    }
}
