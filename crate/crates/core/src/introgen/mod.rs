//! Introduction drafting: find the manuscript's novel paragraphs by voting
//! against each cited work, summarize them, and compose an introduction
//! that cites canonical and recent references by number.

mod claims;
mod compose;
mod novelty;
mod paragraphs;

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Work};
use crate::parallel::map_bounded;
use crate::providers::{self, Embedder, LanguageModel, ProviderError, TemplateSet};
use crate::vectorindex::Metric;

pub use claims::{
    entailment_score, extract_claims, normalize_yes_no, parse_numbered, Entailment, CLAIM_RANGE,
    NO_CONTINUATION, YES_CONTINUATION,
};
pub use compose::{
    bracket_numbers, compose_intro, compose_prompt, strip_fences, summarize_results, Composition,
    DEFAULT_SUMMARY_BUDGET,
};
pub use novelty::{
    classify_novelty, novelty_prompt, parse_yes_no, vote_filter, FilterOutcome, NoveltyVote,
    Verdict, VoteTally,
};
pub use paragraphs::{
    extract_paragraphs, manuscript_title, split_references, RecencyPolicy, ReferenceSplit,
    MIN_PARAGRAPH_CHARS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStage {
    Extract,
    Resolve,
    Split,
    Vote,
    Filter,
    Summarize,
    Compose,
}

impl fmt::Display for ChainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChainStage::Extract => "extract",
            ChainStage::Resolve => "resolve",
            ChainStage::Split => "split",
            ChainStage::Vote => "vote",
            ChainStage::Filter => "filter",
            ChainStage::Summarize => "summarize",
            ChainStage::Compose => "compose",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntroConfig {
    pub y_years: u32,
    pub keep_fraction: f64,
    /// Most references each paragraph is voted against, nearest first.
    pub refs_per_paragraph: usize,
    pub summary_budget: usize,
    pub parallelism: usize,
}

impl Default for IntroConfig {
    fn default() -> Self {
        IntroConfig {
            y_years: 5,
            keep_fraction: 0.5,
            refs_per_paragraph: 8,
            summary_budget: DEFAULT_SUMMARY_BUDGET,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntroInput {
    pub manuscript: String,
    /// Falls back to the manuscript's `\title{}`.
    pub title: Option<String>,
    pub r#abstract: String,
    pub references: Vec<Work>,
    pub reference_date: NaiveDate,
    pub instructions: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub resolved: Vec<String>,
    /// References dropped for lacking a title or abstract.
    pub missing_abstract: Vec<String>,
}

/// Every artifact of one chain run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntroChainState {
    pub title: String,
    #[serde(rename = "abstract")]
    pub r#abstract: String,
    pub y_years: u32,
    pub keep_fraction: f64,
    pub reference_date: Option<NaiveDate>,
    pub paragraphs: Vec<String>,
    pub resolution: ResolutionReport,
    pub canonical_refs: Vec<Work>,
    pub recent_refs: Vec<Work>,
    pub undated_refs: Vec<String>,
    pub votes: Vec<NoveltyVote>,
    pub tallies: Vec<VoteTally>,
    pub unvoted_paragraphs: Vec<usize>,
    pub kept_paragraphs: Vec<String>,
    pub summary: String,
    pub intro_text: String,
    pub citation_map: BTreeMap<u32, String>,
    pub dangling_citations: Vec<u32>,
    pub completed_stages: Vec<ChainStage>,
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct IntroChainError {
    pub stage: ChainStage,
    pub message: String,
    pub provider: Option<ProviderError>,
    /// Everything computed before the failure.
    pub partial: Box<IntroChainState>,
}

pub struct IntroEnv<'a> {
    pub llm: &'a dyn LanguageModel,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a TemplateSet,
}

/// Fills a reference's missing abstract, year and date from the corpus work
/// with the same normalized title.
pub fn resolve_references(references: &[Work], corpus: &Corpus) -> Vec<Work> {
    references
        .iter()
        .map(|r| {
            let mut w = r.clone();
            if let Some(hit) = corpus.find_by_title(&r.title) {
                if w.abstract_text().is_none() {
                    w.r#abstract = hit.r#abstract.clone();
                }
                if w.year.is_none() && w.publication_date.is_none() {
                    w.year = hit.year;
                    w.publication_date = hit.publication_date;
                }
            }
            w
        })
        .collect()
}

/// For each paragraph, the indices of the `cap` nearest references by
/// embedding distance (ties by reference order); all of them when there
/// are no more than `cap`.
fn references_per_paragraph(
    paragraphs: &[String],
    refs: &[Work],
    cap: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<Vec<usize>>, ProviderError> {
    if refs.len() <= cap {
        return Ok(vec![(0..refs.len()).collect(); paragraphs.len()]);
    }
    let ref_texts: Vec<String> = refs.iter().map(Work::embedding_text).collect();
    let ref_vecs = providers::embed(embedder, &ref_texts)?;
    let para_vecs = providers::embed(embedder, paragraphs)?;
    let metric = Metric::Cosine;
    Ok(para_vecs
        .iter()
        .map(|p| {
            let mut d: Vec<(f32, usize)> = ref_vecs
                .iter()
                .enumerate()
                .map(|(i, r)| (metric.between(p, r), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut chosen: Vec<usize> = d.into_iter().take(cap).map(|(_, i)| i).collect();
            chosen.sort_unstable();
            chosen
        })
        .collect())
}

/// Runs the whole chain. On failure the error carries the stage and the
/// state reached so far.
pub fn run_intro_chain(
    input: &IntroInput,
    config: &IntroConfig,
    env: &IntroEnv<'_>,
) -> Result<IntroChainState, IntroChainError> {
    let mut state = IntroChainState {
        title: input
            .title
            .clone()
            .filter(|t| !t.trim().is_empty())
            .or_else(|| manuscript_title(&input.manuscript))
            .unwrap_or_default(),
        r#abstract: input.r#abstract.clone(),
        y_years: config.y_years,
        keep_fraction: config.keep_fraction,
        reference_date: Some(input.reference_date),
        ..Default::default()
    };
    macro_rules! fail {
        ($stage:expr, $msg:expr, $prov:expr) => {
            return Err(IntroChainError {
                stage: $stage,
                message: $msg,
                provider: $prov,
                partial: Box::new(state),
            })
        };
    }

    if input.r#abstract.trim().is_empty() {
        fail!(ChainStage::Extract, "the manuscript abstract is required".into(), None);
    }
    state.paragraphs = extract_paragraphs(&input.manuscript);
    if state.paragraphs.is_empty() {
        fail!(
            ChainStage::Extract,
            format!("no paragraphs of at least {MIN_PARAGRAPH_CHARS} characters found"),
            None
        );
    }
    state.completed_stages.push(ChainStage::Extract);

    let (resolved, dropped): (Vec<&Work>, Vec<&Work>) = input
        .references
        .iter()
        .partition(|w| !w.title.trim().is_empty() && w.abstract_text().is_some());
    state.resolution = ResolutionReport {
        resolved: resolved.iter().map(|w| w.id.clone()).collect(),
        missing_abstract: dropped.iter().map(|w| w.id.clone()).collect(),
    };
    let refs: Vec<Work> = resolved.into_iter().cloned().collect();
    if refs.is_empty() {
        fail!(
            ChainStage::Resolve,
            format!(
                "none of the {} references has both a title and an abstract",
                input.references.len()
            ),
            None
        );
    }
    state.completed_stages.push(ChainStage::Resolve);

    let split = split_references(
        &refs,
        &RecencyPolicy {
            y_years: config.y_years,
            reference_date: input.reference_date,
        },
    );
    state.canonical_refs = split.canonical;
    state.recent_refs = split.recent;
    state.undated_refs = split.undated;
    state.completed_stages.push(ChainStage::Split);

    let assignment = match references_per_paragraph(
        &state.paragraphs,
        &refs,
        config.refs_per_paragraph.max(1),
        env.embedder,
    ) {
        Ok(a) => a,
        Err(e) => fail!(ChainStage::Vote, e.to_string(), Some(e)),
    };
    let jobs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .flat_map(|(p, rs)| rs.iter().map(move |&r| (p, r)))
        .collect();
    let results = map_bounded(&jobs, config.parallelism, |&(p, r)| {
        classify_novelty(
            p,
            &state.paragraphs[p],
            &input.r#abstract,
            &refs[r],
            env.llm,
            env.templates,
        )
    });
    let mut first_error = None;
    for r in results {
        match r {
            Ok(v) => state.votes.push(v),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        fail!(ChainStage::Vote, e.to_string(), Some(e));
    }
    state.completed_stages.push(ChainStage::Vote);

    let outcome = vote_filter(state.paragraphs.len(), &state.votes, config.keep_fraction);
    state.kept_paragraphs = outcome
        .kept
        .iter()
        .map(|&i| state.paragraphs[i].clone())
        .collect();
    state.tallies = outcome.tallies;
    state.unvoted_paragraphs = outcome.unvoted;
    if state.kept_paragraphs.is_empty() {
        fail!(
            ChainStage::Filter,
            format!(
                "no paragraph reached keep_fraction {}; lower it to keep more",
                config.keep_fraction
            ),
            None
        );
    }
    state.completed_stages.push(ChainStage::Filter);

    match summarize_results(&state.kept_paragraphs, env.llm, env.templates, config.summary_budget) {
        Ok(s) => state.summary = s,
        Err(e) => fail!(ChainStage::Summarize, e.to_string(), Some(e)),
    }
    state.completed_stages.push(ChainStage::Summarize);

    if state.canonical_refs.is_empty() && state.recent_refs.is_empty() {
        fail!(ChainStage::Compose, "no dated references to cite".into(), None);
    }
    match compose_intro(
        &state.title,
        &state.summary,
        &state.canonical_refs,
        &state.recent_refs,
        input.instructions.as_deref(),
        env.llm,
        env.templates,
    ) {
        Ok(c) => {
            state.intro_text = c.intro_text;
            state.citation_map = c.citation_map;
            state.dangling_citations = c.dangling;
        }
        Err(e) => fail!(ChainStage::Compose, e.to_string(), Some(e)),
    }
    state.completed_stages.push(ChainStage::Compose);
    Ok(state)
}
