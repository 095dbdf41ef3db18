//! A deterministic stand-in model that recognises the built-in prompts and
//! answers them from word overlap. Useful for demos and tests without a
//! model server; its judgments are crude but stable.

use std::collections::HashSet;

use serde_json::{json, Value};

use crate::evalharness::rouge_tokens;
use crate::providers::{
    ContinuationScore, FinishReason, GenerationRequest, GenerationResult, LanguageModel,
    ProviderError,
};
use crate::recommend::{extract_json_object, CITE_TOKEN};

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineLlm;

fn section<'a>(prompt: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = prompt.find(start)? + start.len();
    let rest = &prompt[from..];
    Some(rest[..rest.find(end).unwrap_or(rest.len())].trim())
}

fn words(text: &str) -> HashSet<String> {
    rouge_tokens(text).into_iter().filter(|t| t.len() > 2).collect()
}

/// Share of `query` words that also occur in `doc`.
fn overlap(query: &str, doc: &str) -> f64 {
    let q = words(query);
    if q.is_empty() {
        return 0.0;
    }
    let d = words(doc);
    q.iter().filter(|w| d.contains(*w)).count() as f64 / q.len() as f64
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if matches!(c, '.' | '?' | '!') {
            let s = cur.trim().to_string();
            if s.len() > 1 {
                out.push(s);
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn citations(block: &str) -> Vec<(String, String)> {
    serde_json::from_str::<Value>(block)
        .ok()
        .and_then(|v| v.as_array().cloned())
        .unwrap_or_default()
        .iter()
        .filter_map(|c| {
            let key = c.get("key")?.as_str()?.to_string();
            let text = format!(
                "{} {}",
                c.get("title").and_then(Value::as_str).unwrap_or(""),
                c.get("abstract").and_then(Value::as_str).unwrap_or("")
            );
            Some((key, text))
        })
        .collect()
}

impl OfflineLlm {
    fn reply(&self, prompt: &str) -> Option<String> {
        if let Some(sents) = section(prompt, "SENTENCES:", "\n") {
            let clean = sents.replace(CITE_TOKEN, " ");
            let title: Vec<&str> = clean.split_whitespace().take(10).collect();
            return Some(json!({"title": title.join(" "), "abstract": clean.split_whitespace().collect::<Vec<_>>().join(" ")}).to_string());
        }
        if prompt.contains("CITATION A\n") {
            let extraction = section(prompt, "EXTRACTION\n", "\n\nCITATION A")?;
            let a = extract_json_object(section(prompt, "CITATION A\n", "\n\nCITATION B")?)?;
            let b = extract_json_object(section(prompt, "CITATION B\n", "\n\nGive the value")?)?;
            let text = |o: &serde_json::Map<String, Value>| {
                format!("{} {}", o["title"].as_str().unwrap_or(""), o["abstract"].as_str().unwrap_or(""))
            };
            let winner = if overlap(extraction, &text(&b)) > overlap(extraction, &text(&a)) { b } else { a };
            return winner.get("key").and_then(Value::as_str).map(str::to_string);
        }
        if let Some(para) = section(prompt, "PARAGRAPH FROM THIS PAPER\n", "\n\nQUESTION") {
            let own = section(prompt, "ABSTRACT OF THIS PAPER\n", "\n\nABSTRACT OF A RELATED")?;
            let other = section(prompt, "ABSTRACT OF A RELATED PAPER\n", "\n\nPARAGRAPH FROM")?;
            return Some(if overlap(para, own) >= overlap(para, other) {
                "YES. The paragraph is closer to this paper than to the related one.".into()
            } else {
                "NO. The paragraph is closer to the related paper.".into()
            });
        }
        if let Some(body) = section(prompt, "Summarize the key\nresults in a few sentences.", "Now summarize") {
            let firsts: Vec<String> = body
                .split("\n\n")
                .filter_map(|p| sentences(p).into_iter().next())
                .collect();
            return Some(firsts.join(" "));
        }
        if prompt.contains("INTRODUCTION:") && prompt.contains("REFERENCE") {
            let title = section(prompt, "PAPER TITLE:", "\n").unwrap_or("");
            let results = section(prompt, "RESULTS:", "\n\nNow write").unwrap_or("");
            let refs = prompt.matches("REFERENCE #").count();
            let cites: Vec<String> = (1..=refs.min(4)).map(|i| format!("[{i}]")).collect();
            return Some(format!(
                "'''{title}. This work builds on earlier studies {}. {results}'''",
                cites.join(", ")
            ));
        }
        if let Some(intro) = section(prompt, "introduction section of an\nacademic paper:", "\n\nList ") {
            let n: usize = section(prompt, "\n\nList ", " novel claims")
                .and_then(|s| s.parse().ok())
                .unwrap_or(3);
            let claims: Vec<String> = sentences(intro)
                .into_iter()
                .take(n)
                .enumerate()
                .map(|(i, s)| format!("{}. {s}", i + 1))
                .collect();
            return Some(claims.join("\n"));
        }
        if let Some(hyp) = section(prompt, "GENERATED PARAGRAPH (hypothesis):\n", "\n\nOriginal introduction") {
            let ctx = section(prompt, "Original introduction (context):\n", "\n\nUse the following")?;
            return Some(if overlap(hyp, ctx) >= 0.5 {
                "yes. The claim is supported by the original.".into()
            } else {
                "no. The claim is not in the original.".into()
            });
        }
        None
    }
}

impl LanguageModel for OfflineLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        Ok(match self.reply(&request.prompt) {
            Some(text) => GenerationResult { text, finish_reason: FinishReason::Stop },
            None => GenerationResult {
                text: request.prompt.clone(),
                finish_reason: FinishReason::MockFallback,
            },
        })
    }

    /// Keys of the scoring prompt get log probabilities from word overlap
    /// between the extraction and each citation; "yes"/"no" after the
    /// entailment prompt from overlap between hypothesis and context.
    fn score_continuations(&self, prompt: &str, continuations: &[String]) -> Result<Vec<ContinuationScore>, ProviderError> {
        let extraction = section(prompt, "EXTRACTION\n", "\n\nCITATIONS").unwrap_or("");
        let cites = section(prompt, "CITATIONS\n", "\n\nThe key of").map(citations).unwrap_or_default();
        let entail = section(prompt, "GENERATED PARAGRAPH (hypothesis):\n", "\n\nOriginal introduction")
            .zip(section(prompt, "Original introduction (context):\n", "\n\nUse the following"))
            .map(|(h, c)| overlap(h, c));
        Ok(continuations
            .iter()
            .map(|c| {
                let logprob = match (c.as_str(), entail) {
                    ("yes", Some(o)) => -4.0 * (1.0 - o),
                    ("no", Some(o)) => -4.0 * o,
                    _ => cites
                        .iter()
                        .find(|(k, _)| k == c)
                        .map(|(_, text)| -8.0 * (1.0 - overlap(extraction, text)) - 0.1)
                        .unwrap_or(-20.0),
                };
                ContinuationScore { continuation: c.clone(), logprob }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Work;
    use crate::introgen::{compose_intro, entailment_score, extract_claims, Verdict};
    use crate::providers::TemplateSet;
    use crate::recommend::{fabricate_citation, score_candidates, Candidate, ContextWindow, Source};

    fn ctx() -> ContextWindow {
        ContextWindow {
            previous_sentence: Some("Graph neural networks scale poorly.".into()),
            masked_sentence: "Sampling neighbours helps CITE-HERE .".into(),
            next_sentence: None,
        }
    }

    fn cand(key: &str, title: &str) -> Candidate {
        let mut w = Work::new(key, title);
        w.r#abstract = Some(title.to_string());
        Candidate { work: w, key: key.into(), source: Source::Index, retrieval_distance: None }
    }

    #[test]
    fn handles_each_prompt() {
        let t = TemplateSet::builtin();
        let fab = fabricate_citation(&ctx(), &OfflineLlm, &t).unwrap();
        assert!(fab.title.starts_with("Graph neural"));
        let ranked = score_candidates(
            &ctx(),
            vec![cand("aaaa", "Protein folding"), cand("bbbb", "Sampling neighbours for graph networks")],
            &OfflineLlm,
            &t,
        )
        .unwrap();
        assert_eq!(ranked[0].candidate.key, "bbbb");
        let mut r = Work::new("r", "Old");
        r.r#abstract = Some("Old abstract.".into());
        let c = compose_intro("Title", "We find things.", &[r], &[], None, &OfflineLlm, &t).unwrap();
        assert_eq!(c.citation_map.len(), 1);
        let claims = extract_claims("One claim here. Two claims there. Three more claims.", 3, &OfflineLlm, &t).unwrap();
        assert_eq!(claims.len(), 3);
        let e = entailment_score("Two claims there.", "One claim here. Two claims there.", &OfflineLlm, &t).unwrap();
        assert_eq!(e.label, Verdict::Yes);
        assert!(e.p_yes.unwrap() > 0.5);
    }
}
