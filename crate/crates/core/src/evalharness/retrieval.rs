use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{EvalCase, SkippedCase, Strategy};
use super::metrics::{mrr, precision_at_k};
use super::{case_seed, EvalError};
use crate::corpus::{Corpus, Work};
use crate::parallel::map_bounded;
use crate::providers::{LanguageModel, TemplateSet};
use crate::recommend::{assign_keys, pairwise_rank, score_candidates, Candidate, Source, MAX_PAIRWISE};

/// The k values reported; each only where k < n.
pub const REPORTED_K: [usize; 3] = [1, 3, 5];

/// Orders the candidates of one case.
pub trait EvalRanker: Sync {
    fn name(&self) -> &str;

    /// Candidate indices, best first. Must be a permutation of
    /// `0..candidates.len()`. `seed` is fixed per case.
    fn rank(&self, case: &EvalCase, candidates: &[Work], seed: u64) -> Result<Vec<usize>, String>;
}

/// Puts the ground truth first.
pub struct OracleRanker;

impl EvalRanker for OracleRanker {
    fn name(&self) -> &str {
        "oracle"
    }

    fn rank(&self, case: &EvalCase, candidates: &[Work], _seed: u64) -> Result<Vec<usize>, String> {
        let (truth, rest): (Vec<usize>, Vec<usize>) =
            (0..candidates.len()).partition(|&i| candidates[i].id == case.ground_truth_id);
        Ok(truth.into_iter().chain(rest).collect())
    }
}

/// Puts the ground truth last.
pub struct AntiOracleRanker;

impl EvalRanker for AntiOracleRanker {
    fn name(&self) -> &str {
        "anti_oracle"
    }

    fn rank(&self, case: &EvalCase, candidates: &[Work], _seed: u64) -> Result<Vec<usize>, String> {
        let (truth, rest): (Vec<usize>, Vec<usize>) =
            (0..candidates.len()).partition(|&i| candidates[i].id == case.ground_truth_id);
        Ok(rest.into_iter().chain(truth).collect())
    }
}

/// A uniformly random permutation per case.
pub struct RandomRanker;

impl EvalRanker for RandomRanker {
    fn name(&self) -> &str {
        "random"
    }

    fn rank(&self, _case: &EvalCase, candidates: &[Work], seed: u64) -> Result<Vec<usize>, String> {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(order)
    }
}

fn keyed(candidates: &[Work], seed: u64) -> Result<Vec<Candidate>, String> {
    let keys = assign_keys(candidates.len(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    Ok(candidates
        .iter()
        .zip(keys)
        .map(|(w, key)| Candidate {
            work: w.clone(),
            key,
            source: Source::Index,
            retrieval_distance: None,
        })
        .collect())
}

fn positions(candidates: &[Candidate], ranked_keys: impl Iterator<Item = String>) -> Vec<usize> {
    let at: BTreeMap<&str, usize> = candidates.iter().enumerate().map(|(i, c)| (c.key.as_str(), i)).collect();
    ranked_keys.filter_map(|k| at.get(k.as_str()).copied()).collect()
}

/// Ranks by the model's log probability of each candidate's key.
pub struct ScoreRanker<'a> {
    pub llm: &'a dyn LanguageModel,
    pub templates: &'a TemplateSet,
}

impl EvalRanker for ScoreRanker<'_> {
    fn name(&self) -> &str {
        "score"
    }

    fn rank(&self, case: &EvalCase, candidates: &[Work], seed: u64) -> Result<Vec<usize>, String> {
        let cands = keyed(candidates, seed)?;
        let ranked = score_candidates(&case.context, cands.clone(), self.llm, self.templates).map_err(|e| e.to_string())?;
        Ok(positions(&cands, ranked.into_iter().map(|s| s.candidate.key)))
    }
}

/// Ranks by wins in a round-robin of pairwise comparisons.
pub struct PairwiseRanker<'a> {
    pub llm: &'a dyn LanguageModel,
    pub templates: &'a TemplateSet,
    pub parallelism: usize,
}

impl EvalRanker for PairwiseRanker<'_> {
    fn name(&self) -> &str {
        "pairwise"
    }

    fn rank(&self, case: &EvalCase, candidates: &[Work], seed: u64) -> Result<Vec<usize>, String> {
        if candidates.len() > MAX_PAIRWISE {
            return Err(format!("pairwise ranking takes at most {MAX_PAIRWISE} candidates"));
        }
        let cands = keyed(candidates, seed)?;
        let ranked = pairwise_rank(&case.context, cands.clone(), self.llm, self.templates, self.parallelism)
            .map_err(|e| e.to_string())?;
        Ok(positions(&cands, ranked.into_iter().map(|s| s.candidate.key)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub strategy: Strategy,
    pub n: usize,
    /// Absent when no case in the row was ranked.
    pub mrr: Option<f64>,
    pub p_at_k: BTreeMap<usize, f64>,
    pub case_count: usize,
    pub failed_count: usize,
    pub skipped_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRank {
    pub case_id: String,
    pub strategy: Strategy,
    pub n: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub strategy: Strategy,
    pub n: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub seed: u64,
    pub ranker: String,
    pub rows: Vec<RetrievalMetrics>,
    pub ranks: Vec<CaseRank>,
    pub failures: Vec<CaseFailure>,
    pub skipped: Vec<SkippedCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: 0, parallelism: 4 }
    }
}

fn check_case(case: &EvalCase) -> Result<(), String> {
    let mut ids: Vec<&str> = case.distractor_ids.iter().map(String::as_str).collect();
    if ids.contains(&case.ground_truth_id.as_str()) {
        return Err("ground truth among distractors".into());
    }
    if ids.len() + 1 != case.n {
        return Err(format!("{} distractors for n = {}", ids.len(), case.n));
    }
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != case.distractor_ids.len() {
        return Err("duplicate distractor".into());
    }
    Ok(())
}

fn rank_case(case: &EvalCase, corpus: &Corpus, ranker: &dyn EvalRanker, seed: u64) -> Result<usize, String> {
    check_case(case)?;
    let mut candidates: Vec<Work> = std::iter::once(&case.ground_truth_id)
        .chain(&case.distractor_ids)
        .map(|id| corpus.get(id).cloned().ok_or_else(|| format!("work '{id}' is not in the corpus")))
        .collect::<Result<_, _>>()?;
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(case_seed(seed, "shuffle", case.strategy, case.n, &case.case_id)));
    let order = ranker.rank(case, &candidates, case_seed(seed, "ranker", case.strategy, case.n, &case.case_id))?;
    let mut seen = vec![false; candidates.len()];
    if order.len() != candidates.len() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
        return Err(format!("ranker returned {order:?}, not a permutation of {} candidates", candidates.len()));
    }
    let truth = candidates
        .iter()
        .position(|w| w.id == case.ground_truth_id)
        .expect("ground truth is a candidate");
    Ok(order.iter().position(|&i| i == truth).expect("permutation") + 1)
}

/// Ranks every case and tabulates one row per (strategy, n). Failed cases
/// are excluded from the means and listed. Cases run concurrently; results
/// are aggregated in (strategy, n, case id) order.
pub fn run_retrieval_eval(
    cases: &[EvalCase],
    skipped: &[SkippedCase],
    corpus: &Corpus,
    ranker: &dyn EvalRanker,
    options: &RunOptions,
) -> Result<RetrievalReport, EvalError> {
    let mut ordered: Vec<&EvalCase> = cases.iter().collect();
    ordered.sort_by(|a, b| (a.strategy, a.n, &a.case_id).cmp(&(b.strategy, b.n, &b.case_id)));
    let outcomes = map_bounded(&ordered, options.parallelism, |c| rank_case(c, corpus, ranker, options.seed));

    let mut report = RetrievalReport {
        seed: options.seed,
        ranker: ranker.name().to_string(),
        rows: Vec::new(),
        ranks: Vec::new(),
        failures: Vec::new(),
        skipped: skipped.to_vec(),
    };
    let mut groups: BTreeMap<(Strategy, usize), (Vec<usize>, usize, usize)> = BTreeMap::new();
    for s in skipped {
        groups.entry((s.strategy, s.n)).or_default().2 += 1;
    }
    for (case, outcome) in ordered.iter().zip(outcomes) {
        let g = groups.entry((case.strategy, case.n)).or_default();
        match outcome {
            Ok(rank) => {
                g.0.push(rank);
                report.ranks.push(CaseRank {
                    case_id: case.case_id.clone(),
                    strategy: case.strategy,
                    n: case.n,
                    rank,
                });
            }
            Err(error) => {
                g.1 += 1;
                tracing::warn!(case = %case.case_id, %error, "case failed");
                report.failures.push(CaseFailure {
                    case_id: case.case_id.clone(),
                    strategy: case.strategy,
                    n: case.n,
                    error,
                });
            }
        }
    }
    for ((strategy, n), (ranks, failed_count, skipped_count)) in groups {
        let (mrr, p_at_k) = if ranks.is_empty() {
            (None, BTreeMap::new())
        } else {
            let mut p = BTreeMap::new();
            for k in REPORTED_K.into_iter().filter(|&k| k < n) {
                p.insert(k, precision_at_k(&ranks, k)?);
            }
            (Some(mrr(&ranks)?), p)
        };
        report.rows.push(RetrievalMetrics {
            strategy,
            n,
            mrr,
            p_at_k,
            case_count: ranks.len(),
            failed_count,
            skipped_count,
        });
    }
    Ok(report)
}

impl RetrievalReport {
    /// Plain-text table: strategy, n, MRR, p@1, p@3, p@5 and case counts.
    pub fn to_table(&self) -> String {
        let mut out = format!("# ranker: {}  seed: {}\n", self.ranker, self.seed);
        let _ = writeln!(
            out,
            "{:<18} {:>3} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>7}",
            "strategy", "n", "MRR", "p@1", "p@3", "p@5", "cases", "failed", "skipped"
        );
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>3} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>7}",
                r.strategy.as_str(),
                r.n,
                cell(r.mrr),
                cell(r.p_at_k.get(&1).copied()),
                cell(r.p_at_k.get(&3).copied()),
                cell(r.p_at_k.get(&5).copied()),
                r.case_count,
                r.failed_count,
                r.skipped_count,
            );
        }
        out
    }

    pub fn row(&self, strategy: Strategy, n: usize) -> Option<&RetrievalMetrics> {
        self.rows.iter().find(|r| r.strategy == strategy && r.n == n)
    }
}
