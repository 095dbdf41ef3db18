use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::novelty::{parse_yes_no, Verdict};
use crate::providers::{self, names, GenerationRequest, LanguageModel, ProviderError, TemplateSet};

pub const CLAIM_RANGE: std::ops::RangeInclusive<usize> = 3..=5;

/// Numbered claims (`1. ...`) the model finds in an introduction, at most
/// `num_claims` of them, in order.
pub fn extract_claims(
    intro_text: &str,
    num_claims: usize,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<Vec<String>, ProviderError> {
    if intro_text.trim().is_empty() {
        return Err(ProviderError::InvalidInput("introduction is empty".into()));
    }
    if !CLAIM_RANGE.contains(&num_claims) {
        return Err(ProviderError::InvalidInput(format!(
            "num_claims must be between 3 and 5, got {num_claims}"
        )));
    }
    let prompt = templates
        .render(
            names::EVAL_CLAIMS,
            &json!({"introduction": intro_text, "num_claims": num_claims}),
        )
        .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
    let reply = providers::generate(llm, &GenerationRequest::new(prompt).max_tokens(512))?.text;
    let claims = parse_numbered(&reply);
    if claims.is_empty() {
        return Err(ProviderError::InvalidResponse(
            "claim list has no numbered lines".into(),
        ));
    }
    Ok(claims.into_iter().take(num_claims).collect())
}

/// Lines of the form `<integer>. <text>`.
pub fn parse_numbered(text: &str) -> Vec<String> {
    let re = Regex::new(r"^\s*\d+\.\s+(\S.*?)\s*$").expect("valid regex");
    text.lines()
        .filter_map(|l| re.captures(l).map(|c| c[1].to_string()))
        .collect()
}

/// `exp(l_yes) / (exp(l_yes) + exp(l_no))`, shifted by the maximum so large
/// magnitudes do not overflow.
pub fn normalize_yes_no(l_yes: f64, l_no: f64) -> f64 {
    let m = l_yes.max(l_no);
    let y = (l_yes - m).exp();
    let n = (l_no - m).exp();
    y / (y + n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entailment {
    pub label: Verdict,
    /// Absent when the provider cannot score continuations.
    pub p_yes: Option<f64>,
}

impl Entailment {
    pub fn p_no(&self) -> Option<f64> {
        self.p_yes.map(|p| 1.0 - p)
    }
}

pub const YES_CONTINUATION: &str = "yes";
pub const NO_CONTINUATION: &str = "no";

/// Whether `hypothesis` (generated text) entails `context` (the original
/// introduction). The label comes from the generated reply; the probability
/// from the normalized log probabilities of "yes" and "no".
pub fn entailment_score(
    hypothesis: &str,
    context: &str,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<Entailment, ProviderError> {
    if hypothesis.trim().is_empty() || context.trim().is_empty() {
        return Err(ProviderError::InvalidInput(
            "hypothesis and context must be non-empty".into(),
        ));
    }
    let prompt = templates
        .render(
            names::EVAL_ENTAILMENT,
            &json!({"gen_intro_para": hypothesis, "orig_intro": context}),
        )
        .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
    let conts = [YES_CONTINUATION.to_string(), NO_CONTINUATION.to_string()];
    let p_yes = match providers::score_continuations(llm, &prompt, &conts) {
        Ok(s) => Some(normalize_yes_no(s[0].logprob, s[1].logprob)),
        Err(e) if e.is_capability() => None,
        Err(e) => return Err(e),
    };
    let reply = providers::generate(llm, &GenerationRequest::new(prompt).max_tokens(128))?.text;
    let label = match (parse_yes_no(&reply), p_yes) {
        (Some((v, _)), _) => v,
        (None, Some(p)) if p >= 0.5 => Verdict::Yes,
        (None, Some(_)) => Verdict::No,
        (None, None) => {
            return Err(ProviderError::InvalidResponse(
                "entailment reply starts with neither yes nor no".into(),
            ))
        }
    };
    Ok(Entailment { label, p_yes })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::providers::mock::ScriptedLlm;

    #[test]
    fn parses_numbered_lines() {
        let text = "1. First claim.\n\n2. Second claim.\nnot a claim\n  3.   Third.\n\n4. Fourth.";
        assert_eq!(parse_numbered(text), ["First claim.", "Second claim.", "Third.", "Fourth."]);
    }

    #[test]
    fn claims_capped_and_checked() {
        let llm = ScriptedLlm::new(0).on("novel claims", "1. A\n2. B\n3. C\n4. D\n5. E\n6. F");
        let t = TemplateSet::builtin();
        assert_eq!(extract_claims("intro", 4, &llm, &t).unwrap(), ["A", "B", "C", "D"]);
        assert!(extract_claims("intro", 6, &llm, &t).is_err());
        let bad = ScriptedLlm::new(0).on("novel claims", "no numbers");
        assert!(matches!(extract_claims("intro", 3, &bad, &t), Err(ProviderError::InvalidResponse(_))));
    }

    #[test]
    fn normalization_values() {
        assert_eq!(normalize_yes_no(-3.0, -3.0), 0.5);
        assert!((normalize_yes_no(-1.0, -2.0) - 0.731_058_578_630_005).abs() < 1e-12);
        assert!((normalize_yes_no(-1000.0, -1002.0) - 0.880_797_077_977_882).abs() < 1e-12);
    }

    #[test]
    fn entailment_with_and_without_scores() {
        let t = TemplateSet::builtin();
        let llm = ScriptedLlm::new(0)
            .on("hypothesis", "yes, it follows")
            .scores([("yes", -1.0), ("no", -2.0)]);
        let e = entailment_score("claim", "intro", &llm, &t).unwrap();
        assert_eq!(e.label, Verdict::Yes);
        assert!((e.p_yes.unwrap() - 0.731059).abs() < 1e-6);
        let plain = ScriptedLlm::new(0).on("hypothesis", "No. Adds claims.").without_scoring();
        let e = entailment_score("claim", "intro", &plain, &t).unwrap();
        assert_eq!(e, Entailment { label: Verdict::No, p_yes: None });
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(a in -500.0f64..0.0, b in -500.0f64..0.0) {
            let e = Entailment { label: Verdict::Yes, p_yes: Some(normalize_yes_no(a, b)) };
            prop_assert_eq!(e.p_yes.unwrap() + e.p_no().unwrap(), 1.0);
            prop_assert!((0.0..=1.0).contains(&e.p_yes.unwrap()));
        }
    }
}
