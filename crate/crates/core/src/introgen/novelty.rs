use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Work;
use crate::providers::{self, names, GenerationRequest, LanguageModel, ProviderError, TemplateSet};

const VERDICT_REMINDER: &str = "\nBegin your answer with YES or NO.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoveltyVote {
    pub paragraph_index: usize,
    pub reference_id: String,
    pub verdict: Verdict,
    pub rationale: String,
}

/// Reads a leading yes/no (any case, after whitespace) as a whole word and
/// returns it with the rest of the reply.
pub fn parse_yes_no(reply: &str) -> Option<(Verdict, String)> {
    let t = reply.trim_start();
    let lower: String = t.chars().take(3).collect::<String>().to_lowercase();
    let (verdict, len) = if lower.starts_with("yes") {
        (Verdict::Yes, 3)
    } else if lower.starts_with("no") {
        (Verdict::No, 2)
    } else {
        return None;
    };
    let rest = &t[len..];
    if rest.chars().next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    let rationale = rest
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ':' | ';' | '-' | '—' | '–' | '!'))
        .trim_end()
        .to_string();
    Some((verdict, rationale))
}

pub fn novelty_prompt(
    paragraph: &str,
    own_abstract: &str,
    reference: &Work,
    templates: &TemplateSet,
) -> Result<String, providers::TemplateSetError> {
    templates.render(
        names::INTRO_NOVELTY,
        &json!({
            "abstract": own_abstract,
            "ref_chunk": [
                paragraph,
                {"title": reference.title, "abstract": reference.abstract_text().unwrap_or("")},
            ],
        }),
    )
}

/// One novelty judgment. A reply without a leading YES or NO is asked once
/// more; a second miss counts as NO.
pub fn classify_novelty(
    paragraph_index: usize,
    paragraph: &str,
    own_abstract: &str,
    reference: &Work,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<NoveltyVote, ProviderError> {
    let prompt = novelty_prompt(paragraph, own_abstract, reference, templates)
        .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
    let ask = |p: String| providers::generate(llm, &GenerationRequest::new(p).max_tokens(128));
    let vote = |verdict, rationale| NoveltyVote {
        paragraph_index,
        reference_id: reference.id.clone(),
        verdict,
        rationale,
    };
    if let Some((v, r)) = parse_yes_no(&ask(prompt.clone())?.text) {
        return Ok(vote(v, r));
    }
    Ok(match parse_yes_no(&ask(prompt + VERDICT_REMINDER)?.text) {
        Some((v, r)) => vote(v, r),
        None => vote(Verdict::No, "unparseable".to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub paragraph_index: usize,
    pub yes: usize,
    pub no: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Indices of kept paragraphs, ascending.
    pub kept: Vec<usize>,
    pub tallies: Vec<VoteTally>,
    /// Paragraphs that received no votes and were therefore excluded.
    pub unvoted: Vec<usize>,
}

/// Keeps a paragraph when its share of YES votes reaches `keep_fraction`.
pub fn vote_filter(paragraph_count: usize, votes: &[NoveltyVote], keep_fraction: f64) -> FilterOutcome {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for v in votes.iter().filter(|v| v.paragraph_index < paragraph_count) {
        let e = counts.entry(v.paragraph_index).or_default();
        match v.verdict {
            Verdict::Yes => e.0 += 1,
            Verdict::No => e.1 += 1,
        }
    }
    let mut out = FilterOutcome {
        kept: Vec::new(),
        tallies: Vec::new(),
        unvoted: Vec::new(),
    };
    for i in 0..paragraph_count {
        match counts.get(&i) {
            None => out.unvoted.push(i),
            Some(&(yes, no)) => {
                let kept = yes as f64 / (yes + no) as f64 >= keep_fraction;
                if kept {
                    out.kept.push(i);
                }
                out.tallies.push(VoteTally {
                    paragraph_index: i,
                    yes,
                    no,
                    kept,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::providers::mock::ScriptedLlm;

    #[test]
    fn verdict_parsing() {
        assert_eq!(
            parse_yes_no("  YES — introduces a new metric."),
            Some((Verdict::Yes, "introduces a new metric.".into()))
        );
        assert_eq!(parse_yes_no("no, restates prior work").unwrap().0, Verdict::No);
        assert_eq!(parse_yes_no("Yes"), Some((Verdict::Yes, String::new())));
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no("Nothing new"), None);
        assert_eq!(parse_yes_no("yesterday"), None);
    }

    fn reference() -> Work {
        let mut w = Work::new("R1", "Prior");
        w.r#abstract = Some("Prior abstract.".into());
        w
    }

    #[test]
    fn unparseable_twice_is_no() {
        let llm = ScriptedLlm::new(0).on("PARAGRAPH FROM THIS PAPER", "maybe");
        let v = classify_novelty(0, "para", "abs", &reference(), &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(v.verdict, Verdict::No);
        assert_eq!(v.rationale, "unparseable");
        assert_eq!(llm.generate_count(), 2);
    }

    #[test]
    fn reask_can_recover() {
        let llm = ScriptedLlm::new(0).on_sequence("PARAGRAPH FROM THIS PAPER", ["hmm", "YES. It is new."]);
        let v = classify_novelty(3, "para", "abs", &reference(), &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(v.verdict, Verdict::Yes);
        assert_eq!(v.paragraph_index, 3);
        assert_eq!(v.reference_id, "R1");
    }

    fn votes(spec: &[(usize, bool)]) -> Vec<NoveltyVote> {
        spec.iter()
            .map(|&(p, yes)| NoveltyVote {
                paragraph_index: p,
                reference_id: "r".into(),
                verdict: if yes { Verdict::Yes } else { Verdict::No },
                rationale: String::new(),
            })
            .collect()
    }

    #[test]
    fn majority_threshold() {
        let v = votes(&[(0, true), (0, true), (0, true), (0, false), (1, true), (1, false), (1, false), (1, false)]);
        let out = vote_filter(3, &v, 0.5);
        assert_eq!(out.kept, [0]);
        assert_eq!(out.unvoted, [2]);
        assert_eq!(out.tallies[0], VoteTally { paragraph_index: 0, yes: 3, no: 1, kept: true });
        assert_eq!(vote_filter(3, &v, 0.0).kept, [0, 1]);
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds(spec in proptest::collection::vec((0usize..6, any::<bool>()), 0..40), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let v = votes(&spec);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let low = vote_filter(6, &v, lo).kept;
            let high = vote_filter(6, &v, hi).kept;
            prop_assert!(high.iter().all(|i| low.contains(i)));
        }
    }
}
