//! Request and response shapes shared by the HTTP handlers and the CLI.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::NaiveDate;
use quill_core::corpus::{works_from_bibtex, BibDiagnostic, Corpus};
use quill_core::introgen::{
    resolve_references, run_intro_chain, IntroChainError, IntroChainState, IntroConfig, IntroEnv,
    IntroInput,
};
use quill_core::recommend::{
    suggest_observed, ContextWindow, Ranker, RecommendError, Stage, SuggestConfig, SuggestEnv,
    Suggestion,
};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::engine::Engine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub document: String,
    /// Char offset of the insertion point.
    pub cursor: usize,
    #[serde(default)]
    pub bibtex: String,
    #[serde(default)]
    pub max_suggestions: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub ranker: Option<Ranker>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub context: ContextWindow,
    pub suggestions: Vec<Suggestion>,
    pub used_fallback: bool,
    pub ranker: Ranker,
    pub seed: u64,
    /// Milliseconds spent in each stage, plus `total`.
    pub timings_ms: BTreeMap<String, f64>,
    pub bibtex_warnings: Vec<String>,
}

fn warnings(diags: &[BibDiagnostic]) -> Vec<String> {
    diags.iter().map(|d| format!("line {}: {}", d.line, d.message)).collect()
}

pub fn suggest(engine: &Engine, req: &SuggestRequest) -> Result<SuggestResponse, RecommendError> {
    let config = SuggestConfig {
        k: req.k.unwrap_or(engine.config.k),
        max_suggestions: req.max_suggestions.unwrap_or(engine.config.max_suggestions),
        ranker: req.ranker.unwrap_or_default(),
        seed: req.seed.unwrap_or(engine.config.seed),
        parallelism: engine.config.parallelism,
        ..SuggestConfig::default()
    };
    if config.k == 0 || config.max_suggestions == 0 {
        return Err(RecommendError::Input("k and max_suggestions must be positive".into()));
    }
    let (bib_works, diags) = works_from_bibtex(&req.bibtex);
    let env = SuggestEnv {
        library: &engine.library,
        llm: &*engine.llm,
        embedder: &*engine.embedder,
        templates: &engine.templates,
    };
    let start = Instant::now();
    let mut last = start;
    let mut timings = BTreeMap::new();
    let mut observe = |stage: Stage| {
        let now = Instant::now();
        timings.insert(stage.to_string(), (now - last).as_secs_f64() * 1000.0);
        last = now;
    };
    let batch = suggest_observed(&req.document, req.cursor, &bib_works, &env, &config, &mut observe)?;
    timings.insert("total".into(), start.elapsed().as_secs_f64() * 1000.0);
    Ok(SuggestResponse {
        context: batch.context,
        suggestions: batch.suggestions,
        used_fallback: batch.used_fallback,
        ranker: config.ranker,
        seed: config.seed,
        timings_ms: timings,
        bibtex_warnings: warnings(&diags),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntroRequest {
    pub manuscript: String,
    #[serde(default)]
    pub bibtex: String,
    #[serde(default, rename = "abstract")]
    pub r#abstract: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub y_years: Option<u32>,
    #[serde(default)]
    pub keep_fraction: Option<f64>,
    /// Date the recency split is measured from; today when absent.
    #[serde(default)]
    pub reference_date: Option<NaiveDate>,
    #[serde(default)]
    pub instructions: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntroResponse {
    pub intro_text: String,
    pub trace: IntroChainState,
    pub bibtex_warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum IntroFailure {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Chain(#[from] IntroChainError),
}

/// Runs the introduction chain on a request. Bibliography entries missing
/// an abstract or date are completed from `corpus` by title when possible.
pub fn intro(
    corpus: Option<&Corpus>,
    env: &IntroEnv<'_>,
    defaults: &ServiceConfig,
    req: &IntroRequest,
) -> Result<IntroResponse, IntroFailure> {
    let abstract_text = req.r#abstract.clone().unwrap_or_default();
    if abstract_text.trim().is_empty() {
        return Err(IntroFailure::Input("abstract is required".into()));
    }
    let keep_fraction = req.keep_fraction.unwrap_or(defaults.keep_fraction);
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(IntroFailure::Input(format!("keep_fraction {keep_fraction} is outside [0, 1]")));
    }
    let (bib_works, diags) = works_from_bibtex(&req.bibtex);
    let references = match corpus {
        Some(c) => resolve_references(&bib_works, c),
        None => bib_works,
    };
    let input = IntroInput {
        manuscript: req.manuscript.clone(),
        title: req.title.clone(),
        r#abstract: abstract_text,
        references,
        reference_date: req.reference_date.unwrap_or_else(|| chrono::Local::now().date_naive()),
        instructions: req.instructions.clone(),
    };
    let config = IntroConfig {
        y_years: req.y_years.unwrap_or(defaults.y_years),
        keep_fraction,
        parallelism: defaults.parallelism,
        ..IntroConfig::default()
    };
    let trace = run_intro_chain(&input, &config, env)?;
    Ok(IntroResponse {
        intro_text: trace.intro_text.clone(),
        trace,
        bibtex_warnings: warnings(&diags),
    })
}
