use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Candidate, ContextWindow, RecommendError, Stage};
use crate::parallel::map_bounded;
use crate::providers::{self, names, GenerationRequest, LanguageModel, ProviderError, TemplateSet};

pub const MAX_PAIRWISE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    /// Log probability of the key, or the win count for pairwise ranking.
    pub score: f64,
    pub rank: usize,
}

/// Score descending, then retrieval distance ascending (missing last), then
/// key ascending.
pub fn standard_order(a: &(Candidate, f64), b: &(Candidate, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| {
            let da = a.0.retrieval_distance.unwrap_or(f32::INFINITY);
            let db = b.0.retrieval_distance.unwrap_or(f32::INFINITY);
            da.total_cmp(&db)
        })
        .then_with(|| a.0.key.cmp(&b.0.key))
}

pub fn rank_scored(mut scored: Vec<(Candidate, f64)>) -> Vec<ScoredCandidate> {
    scored.sort_by(standard_order);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (candidate, score))| ScoredCandidate {
            candidate,
            score,
            rank: i + 1,
        })
        .collect()
}

fn check_keys(candidates: &[Candidate]) -> Result<(), RecommendError> {
    let mut seen = std::collections::HashSet::new();
    if let Some(c) = candidates.iter().find(|c| !seen.insert(c.key.as_str())) {
        return Err(RecommendError::Input(format!("duplicate candidate key '{}'", c.key)));
    }
    Ok(())
}

fn citation_json(c: &Candidate) -> serde_json::Value {
    json!({
        "key": c.key,
        "title": c.work.title,
        "abstract": c.work.abstract_text().unwrap_or(""),
    })
}

/// The scoring prompt for a batch. Citations are listed by ascending key so
/// the prompt does not depend on candidate order.
pub fn score_prompt(
    ctx: &ContextWindow,
    candidates: &[Candidate],
    templates: &TemplateSet,
) -> Result<String, RecommendError> {
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut vars = ctx.template_vars();
    vars.insert(
        "citations".into(),
        sorted.iter().map(|c| citation_json(c)).collect::<Vec<_>>().into(),
    );
    Ok(templates
        .get(names::CITE_SCORE)?
        .render(&vars)
        .map_err(providers::TemplateSetError::from)?)
}

/// Ranks candidates by the model's log probability of emitting each key
/// after the scoring prompt, from a single scoring pass.
pub fn score_candidates(
    ctx: &ContextWindow,
    candidates: Vec<Candidate>,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<Vec<ScoredCandidate>, RecommendError> {
    if candidates.is_empty() {
        return Err(RecommendError::Input("no candidates to score".into()));
    }
    check_keys(&candidates)?;
    let prompt = score_prompt(ctx, &candidates, templates)?;
    let mut keys: Vec<String> = candidates.iter().map(|c| c.key.clone()).collect();
    keys.sort();
    let scores = providers::score_continuations(llm, &prompt, &keys).map_err(|e| {
        if e.is_capability() {
            RecommendError::Capability(format!(
                "{e}; use the pairwise ranker with this provider"
            ))
        } else {
            RecommendError::Provider {
                stage: Stage::Score,
                source: e,
            }
        }
    })?;
    let by_key: HashMap<String, f64> = scores
        .into_iter()
        .map(|s| (s.continuation, s.logprob))
        .collect();
    Ok(rank_scored(
        candidates
            .into_iter()
            .map(|c| {
                let s = by_key[&c.key];
                (c, s)
            })
            .collect(),
    ))
}

/// One completed comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub first: String,
    pub second: String,
    pub winner: String,
}

/// A reply that starts with one of the keys, or mentions only one of them,
/// names the winner; anything else is unusable.
fn pick_winner(reply: &str, a: &str, b: &str) -> Option<String> {
    let reply = reply.trim().trim_start_matches(['"', '\'', '`']);
    for key in [a, b] {
        if reply.starts_with(key) {
            return Some(key.to_string());
        }
    }
    match (reply.contains(a), reply.contains(b)) {
        (true, false) => Some(a.to_string()),
        (false, true) => Some(b.to_string()),
        _ => None,
    }
}

/// Round-robin tournament: each unordered pair is shown once with the
/// lower-keyed candidate first; candidates are ranked by win count.
pub fn pairwise_rank(
    ctx: &ContextWindow,
    candidates: Vec<Candidate>,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
    parallelism: usize,
) -> Result<Vec<ScoredCandidate>, RecommendError> {
    let n = candidates.len();
    if !(2..=MAX_PAIRWISE).contains(&n) {
        return Err(RecommendError::Input(format!(
            "pairwise ranking needs 2 to {MAX_PAIRWISE} candidates, got {n}"
        )));
    }
    check_keys(&candidates)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| candidates[i].key.cmp(&candidates[j].key));
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for (x, &i) in order.iter().enumerate() {
        for &j in &order[x + 1..] {
            pairs.push((i, j));
        }
    }
    let template = templates.get(names::CITE_PAIRWISE)?;
    let results = map_bounded(&pairs, parallelism, |&(i, j)| {
        let (a, b) = (&candidates[i], &candidates[j]);
        let mut vars = ctx.template_vars();
        vars.insert("first".into(), citation_json(a));
        vars.insert("second".into(), citation_json(b));
        let prompt = template
            .render(&vars)
            .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        let reply = providers::generate(llm, &GenerationRequest::new(prompt).max_tokens(8))?;
        pick_winner(&reply.text, &a.key, &b.key).ok_or_else(|| {
            ProviderError::InvalidResponse(format!(
                "reply names neither '{}' nor '{}'",
                a.key, b.key
            ))
        })
    });

    let mut completed = Vec::new();
    let mut failure = None;
    let mut wins: HashMap<&str, f64> = candidates.iter().map(|c| (c.key.as_str(), 0.0)).collect();
    for (&(i, j), r) in pairs.iter().zip(results) {
        match r {
            Ok(winner) => {
                *wins.get_mut(winner.as_str()).unwrap() += 1.0;
                completed.push(PairOutcome {
                    first: candidates[i].key.clone(),
                    second: candidates[j].key.clone(),
                    winner,
                });
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(source) = failure {
        return Err(RecommendError::PartialTournament {
            completed,
            total: pairs.len(),
            source,
        });
    }
    let scored = candidates
        .iter()
        .map(|c| (c.clone(), wins[c.key.as_str()]))
        .collect();
    Ok(rank_scored(scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Work;
    use crate::providers::mock::ScriptedLlm;
    use crate::recommend::Source;

    fn cand(key: &str, dist: Option<f32>) -> Candidate {
        Candidate {
            work: Work::new(format!("W-{key}"), format!("Title {key}")),
            key: key.into(),
            source: Source::Index,
            retrieval_distance: dist,
        }
    }

    fn ctx() -> ContextWindow {
        ContextWindow {
            previous_sentence: Some("P.".into()),
            masked_sentence: "M CITE-HERE.".into(),
            next_sentence: None,
        }
    }

    #[test]
    fn ranks_by_score() {
        let llm = ScriptedLlm::new(0).scores([("a1b2", -0.1), ("c3d4", -2.3)]);
        let r = score_candidates(&ctx(), vec![cand("c3d4", Some(0.1)), cand("a1b2", Some(0.9))], &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(r[0].candidate.key, "a1b2");
        assert_eq!(r[0].rank, 1);
        assert_eq!(r[1].rank, 2);
        assert_eq!(llm.score_count(), 1);
    }

    #[test]
    fn ties_break_on_distance_then_key() {
        let llm = ScriptedLlm::new(0).scores([("aaaa", -1.0), ("bbbb", -1.0), ("cccc", -1.0)]);
        let r = score_candidates(
            &ctx(),
            vec![cand("aaaa", Some(0.5)), cand("bbbb", Some(0.2)), cand("cccc", None)],
            &llm,
            &TemplateSet::builtin(),
        )
        .unwrap();
        let keys: Vec<_> = r.iter().map(|s| s.candidate.key.as_str()).collect();
        assert_eq!(keys, ["bbbb", "aaaa", "cccc"]);
    }

    #[test]
    fn single_candidate_and_capability_error() {
        let llm = ScriptedLlm::new(0);
        let r = score_candidates(&ctx(), vec![cand("0f0f", None)], &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(r[0].rank, 1);
        let err = score_candidates(&ctx(), vec![cand("0f0f", None)], &ScriptedLlm::new(0).without_scoring(), &TemplateSet::builtin())
            .unwrap_err();
        assert!(matches!(err, RecommendError::Capability(ref m) if m.contains("pairwise")));
    }

    #[test]
    fn score_prompt_ignores_candidate_order() {
        let t = TemplateSet::builtin();
        let a = vec![cand("aaaa", None), cand("bbbb", None)];
        let b = vec![cand("bbbb", None), cand("aaaa", None)];
        assert_eq!(score_prompt(&ctx(), &a, &t).unwrap(), score_prompt(&ctx(), &b, &t).unwrap());
    }

    fn tournament(beats: &'static [(&'static str, &'static str)]) -> ScriptedLlm {
        ScriptedLlm::new(0).with_handler(move |p| {
            beats
                .iter()
                .find(|(w, l)| p.contains(&format!("\"{w}\"")) && p.contains(&format!("\"{l}\"")))
                .map(|(w, _)| w.to_string())
        })
    }

    #[test]
    fn transitive_tournament() {
        let llm = tournament(&[("aaaa", "bbbb"), ("aaaa", "cccc"), ("bbbb", "cccc")]);
        let r = pairwise_rank(&ctx(), vec![cand("cccc", None), cand("bbbb", None), cand("aaaa", None)], &llm, &TemplateSet::builtin(), 2).unwrap();
        let got: Vec<_> = r.iter().map(|s| (s.candidate.key.as_str(), s.score)).collect();
        assert_eq!(got, [("aaaa", 2.0), ("bbbb", 1.0), ("cccc", 0.0)]);
        assert_eq!(llm.generate_count(), 3);
    }

    #[test]
    fn cyclic_tournament_falls_to_tie_break() {
        let llm = tournament(&[("aaaa", "bbbb"), ("bbbb", "cccc"), ("cccc", "aaaa")]);
        let r = pairwise_rank(
            &ctx(),
            vec![cand("aaaa", Some(0.3)), cand("bbbb", Some(0.1)), cand("cccc", Some(0.2))],
            &llm,
            &TemplateSet::builtin(),
            1,
        )
        .unwrap();
        assert!(r.iter().all(|s| s.score == 1.0));
        let keys: Vec<_> = r.iter().map(|s| s.candidate.key.as_str()).collect();
        assert_eq!(keys, ["bbbb", "cccc", "aaaa"]);
    }

    #[test]
    fn two_candidates_and_bounds() {
        let llm = tournament(&[("bbbb", "aaaa")]);
        let r = pairwise_rank(&ctx(), vec![cand("aaaa", None), cand("bbbb", None)], &llm, &TemplateSet::builtin(), 1).unwrap();
        assert_eq!(r[0].candidate.key, "bbbb");
        assert_eq!(llm.generate_count(), 1);
        assert!(pairwise_rank(&ctx(), vec![cand("aaaa", None)], &llm, &TemplateSet::builtin(), 1).is_err());
    }

    #[test]
    fn failure_reports_completed_pairs() {
        let llm = tournament(&[("aaaa", "bbbb"), ("aaaa", "cccc")]);
        let err = pairwise_rank(&ctx(), vec![cand("aaaa", None), cand("bbbb", None), cand("cccc", None)], &llm, &TemplateSet::builtin(), 1)
            .unwrap_err();
        match err {
            RecommendError::PartialTournament { completed, total, .. } => {
                assert_eq!(total, 3);
                assert_eq!(completed.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
