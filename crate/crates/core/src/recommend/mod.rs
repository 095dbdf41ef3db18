//! Citation suggestion: fabricate a plausible paper for the citation slot,
//! retrieve real works near it, and re-rank them with the language model.

mod context;
mod fabricate;
mod rank;
mod retrieve;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Work;
use crate::providers::{Embedder, LanguageModel, ProviderError, TemplateSet, TemplateSetError};
use crate::vectorindex::IndexError;

pub use context::{make_context, segment_sentences, ContextWindow, CITE_TOKEN};
pub use fabricate::{extract_json_object, fabricate_citation, FabricatedWork};
pub use rank::{
    pairwise_rank, rank_scored, score_candidates, score_prompt, standard_order, PairOutcome,
    ScoredCandidate, MAX_PAIRWISE,
};
pub use retrieve::{
    assign_keys, embed_query, embed_works, retrieve_candidates, Candidate, Library, Source,
    KEY_SPACE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Context,
    Fabricate,
    Embed,
    Retrieve,
    Score,
    Pairwise,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Context => "context",
            Stage::Fabricate => "fabricate",
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Score => "score",
            Stage::Pairwise => "pairwise",
        })
    }
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("cannot draw {requested} distinct keys from {limit}")]
    Capacity { requested: usize, limit: usize },
    #[error("model did not return a parseable fabrication: {response:?}")]
    Fabrication { response: String },
    #[error("{stage} stage: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("{stage} stage: {source}")]
    Index {
        stage: Stage,
        #[source]
        source: IndexError,
    },
    #[error("{0}")]
    Capability(String),
    #[error("pairwise tournament stopped after {} of {total} comparisons: {source}", completed.len())]
    PartialTournament {
        completed: Vec<PairOutcome>,
        total: usize,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Template(#[from] TemplateSetError),
}

impl From<IndexError> for RecommendError {
    fn from(source: IndexError) -> Self {
        RecommendError::Index {
            stage: Stage::Retrieve,
            source,
        }
    }
}

impl RecommendError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            RecommendError::Provider { stage, .. } | RecommendError::Index { stage, .. } => Some(*stage),
            RecommendError::Fabrication { .. } => Some(Stage::Fabricate),
            RecommendError::Capability(_) => Some(Stage::Score),
            RecommendError::PartialTournament { .. } => Some(Stage::Pairwise),
            _ => None,
        }
    }

    /// The provider failure behind this error, if any.
    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            RecommendError::Provider { source, .. }
            | RecommendError::PartialTournament { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranker {
    #[default]
    Score,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuggestConfig {
    /// Index neighbours retrieved per query.
    pub k: usize,
    pub max_suggestions: usize,
    /// Upper bound on the union of index and bibliography candidates.
    pub candidate_cap: usize,
    pub ranker: Ranker,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        SuggestConfig {
            k: 10,
            max_suggestions: 10,
            candidate_cap: 20,
            ranker: Ranker::Score,
            seed: 0,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub rank: usize,
    pub key: String,
    pub work_id: String,
    pub title: String,
    pub year: Option<i32>,
    pub venue: Option<String>,
    pub source: Source,
    pub score: f64,
}

impl From<&ScoredCandidate> for Suggestion {
    fn from(s: &ScoredCandidate) -> Self {
        let w = &s.candidate.work;
        Suggestion {
            rank: s.rank,
            key: s.candidate.key.clone(),
            work_id: w.id.clone(),
            title: w.title.clone(),
            year: w.year,
            venue: w.venue.clone(),
            source: s.candidate.source,
            score: s.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBatch {
    pub context: ContextWindow,
    pub suggestions: Vec<Suggestion>,
    /// Set when fabrication failed and the masked sentence was used as the
    /// query instead.
    #[serde(skip)]
    pub used_fallback: bool,
}

/// Everything `suggest` needs besides the request itself.
pub struct SuggestEnv<'a> {
    pub library: &'a Library,
    pub llm: &'a dyn LanguageModel,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a TemplateSet,
}

/// Per-stage hook, called with the stage name as each one finishes.
pub type StageObserver<'a> = &'a mut dyn FnMut(Stage);

/// End-to-end suggestion for the citation slot at `cursor`.
pub fn suggest(
    document: &str,
    cursor: usize,
    bib_works: &[Work],
    env: &SuggestEnv<'_>,
    config: &SuggestConfig,
) -> Result<SuggestionBatch, RecommendError> {
    suggest_observed(document, cursor, bib_works, env, config, &mut |_| {})
}

pub fn suggest_observed(
    document: &str,
    cursor: usize,
    bib_works: &[Work],
    env: &SuggestEnv<'_>,
    config: &SuggestConfig,
    observe: StageObserver<'_>,
) -> Result<SuggestionBatch, RecommendError> {
    let ctx = make_context(document, cursor)?;
    observe(Stage::Context);

    let (query_text, used_fallback) = match fabricate_citation(&ctx, env.llm, env.templates) {
        Ok(fab) => (fab.query_text(), false),
        Err(RecommendError::Fabrication { .. }) => {
            tracing::warn!("fabrication failed, querying with the masked sentence");
            (ctx.unmasked_sentence(), true)
        }
        Err(e) => return Err(e),
    };
    observe(Stage::Fabricate);

    let query = embed_query(env.embedder, &query_text)?;
    observe(Stage::Embed);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates = retrieve_candidates(
        &query,
        env.library,
        bib_works,
        env.embedder,
        config.k,
        config.candidate_cap,
        &mut rng,
    )?;
    observe(Stage::Retrieve);

    let ranked = match (config.ranker, candidates.len()) {
        (_, 0) => Vec::new(),
        (Ranker::Score, _) => {
            let r = score_candidates(&ctx, candidates, env.llm, env.templates)?;
            observe(Stage::Score);
            r
        }
        (Ranker::Pairwise, 1) => rank_scored(candidates.into_iter().map(|c| (c, 0.0)).collect()),
        (Ranker::Pairwise, _) => {
            let mut nearest = candidates;
            nearest.sort_by(|a, b| {
                a.retrieval_distance
                    .unwrap_or(f32::INFINITY)
                    .total_cmp(&b.retrieval_distance.unwrap_or(f32::INFINITY))
                    .then_with(|| a.key.cmp(&b.key))
            });
            nearest.truncate(MAX_PAIRWISE);
            let r = pairwise_rank(&ctx, nearest, env.llm, env.templates, config.parallelism)?;
            observe(Stage::Pairwise);
            r
        }
    };
    Ok(SuggestionBatch {
        context: ctx,
        suggestions: ranked
            .iter()
            .take(config.max_suggestions)
            .map(Suggestion::from)
            .collect(),
        used_fallback,
    })
}
