//! Offline evaluation: citation retrieval against distractors, and
//! generated introductions against the originals.

mod dataset;
mod intro;
mod metrics;
mod retrieval;

use thiserror::Error;

use crate::providers::mock::fnv1a;

pub use dataset::{
    build_cases, build_eval_set, make_distractors, mask_sentence, parse_source_papers,
    strip_citations, AnnotatedSentence, CasePlan, DistractorSource, EvalCase, EvalItem, EvalSet,
    EvalSetOptions, SkipReason, SkippedCase, SourcePaper, Strategy,
};
pub use intro::{
    run_intro_eval, ClaimRecord, Distribution, IntroEvalOptions, IntroEvalReport, IntroPair,
    PairResult, RougeSummary,
};
pub use metrics::{mrr, precision_at_k, random_ranker_mrr, rouge1, rouge_tokens, RougeScore};
pub use retrieval::{
    run_retrieval_eval, AntiOracleRanker, CaseFailure, CaseRank, EvalRanker, OracleRanker,
    PairwiseRanker, RandomRanker, RetrievalMetrics, RetrievalReport, RunOptions, ScoreRanker,
    REPORTED_K,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Seed for one purpose within one case, independent of case order.
pub(crate) fn case_seed(seed: u64, purpose: &str, strategy: Strategy, n: usize, case_id: &str) -> u64 {
    fnv1a(seed, format!("{purpose}/{strategy}/{n}/{case_id}").as_bytes())
}
