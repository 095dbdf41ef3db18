use serde::{Deserialize, Serialize};

use super::metrics::{rouge1, RougeScore};
use super::EvalError;
use crate::introgen::{entailment_score, extract_claims, Verdict};
use crate::parallel::map_bounded;
use crate::providers::{LanguageModel, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntroPair {
    #[serde(default)]
    pub id: String,
    pub generated: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim: String,
    pub label: Verdict,
    pub p_yes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub rouge: RougeScore,
    pub claims: Vec<ClaimRecord>,
    /// Set when claim extraction or entailment failed for this pair.
    pub error: Option<String>,
}

/// Mean, min, median and max on the ×100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Distribution {
        let mut v: Vec<f64> = values.iter().map(|x| x * 100.0).collect();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] };
        Distribution {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            median,
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeSummary {
    pub recall: Distribution,
    pub precision: Distribution,
    pub f1: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntroEvalReport {
    pub pairs: Vec<PairResult>,
    pub rouge: RougeSummary,
    pub claim_count: usize,
    pub entailed: usize,
    pub not_entailed: usize,
    pub failed_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntroEvalOptions {
    pub num_claims: usize,
    pub parallelism: usize,
}

impl Default for IntroEvalOptions {
    fn default() -> Self {
        IntroEvalOptions { num_claims: 5, parallelism: 4 }
    }
}

fn evaluate_pair(
    pair: &IntroPair,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
    num_claims: usize,
) -> PairResult {
    let mut result = PairResult {
        id: pair.id.clone(),
        rouge: rouge1(&pair.generated, &pair.original),
        claims: Vec::new(),
        error: None,
    };
    let claims = match extract_claims(&pair.generated, num_claims, llm, templates) {
        Ok(c) => c,
        Err(e) => {
            result.error = Some(format!("claim extraction: {e}"));
            return result;
        }
    };
    for claim in claims {
        match entailment_score(&claim, &pair.original, llm, templates) {
            Ok(e) => result.claims.push(ClaimRecord { claim, label: e.label, p_yes: e.p_yes }),
            Err(e) => {
                result.error = Some(format!("entailment: {e}"));
                result.claims.clear();
                return result;
            }
        }
    }
    result
}

/// ROUGE-1 of each generated introduction against its original, plus
/// whether each extracted claim is entailed by the original. A provider
/// failure affects only its own pair.
pub fn run_intro_eval(
    pairs: &[IntroPair],
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
    options: &IntroEvalOptions,
) -> Result<IntroEvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Input("no introduction pairs".into()));
    }
    let named: Vec<IntroPair> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| IntroPair {
            id: if p.id.is_empty() { format!("pair-{i}") } else { p.id.clone() },
            ..p.clone()
        })
        .collect();
    let results = map_bounded(&named, options.parallelism, |p| evaluate_pair(p, llm, templates, options.num_claims));
    let pick = |f: fn(&RougeScore) -> f64| results.iter().map(|r| f(&r.rouge)).collect::<Vec<_>>();
    let claims = results.iter().flat_map(|r| &r.claims);
    let entailed = claims.clone().filter(|c| c.label == Verdict::Yes).count();
    let claim_count = claims.count();
    Ok(IntroEvalReport {
        rouge: RougeSummary {
            recall: Distribution::of(&pick(|r| r.recall)),
            precision: Distribution::of(&pick(|r| r.precision)),
            f1: Distribution::of(&pick(|r| r.f1)),
        },
        claim_count,
        entailed,
        not_entailed: claim_count - entailed,
        failed_pairs: results.iter().filter(|r| r.error.is_some()).count(),
        pairs: results,
    })
}

impl IntroEvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("pair                      R1-recall  R1-prec  R1-f1  claims  entailed\n");
        for p in &self.pairs {
            let yes = p.claims.iter().filter(|c| c.label == Verdict::Yes).count();
            out.push_str(&format!(
                "{:<24} {:>10.1} {:>8.1} {:>6.1} {:>7} {:>9}{}\n",
                p.id,
                p.rouge.recall * 100.0,
                p.rouge.precision * 100.0,
                p.rouge.f1 * 100.0,
                p.claims.len(),
                yes,
                p.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default(),
            ));
        }
        out.push_str(&format!(
            "mean ROUGE-1 (x100): recall {:.1}, precision {:.1}, f1 {:.1}\nclaims: {} entailed of {}\n",
            self.rouge.recall.mean, self.rouge.precision.mean, self.rouge.f1.mean, self.entailed, self.claim_count
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{Faulty, ScriptedLlm};
    use crate::providers::ProviderError;

    fn scripted() -> ScriptedLlm {
        ScriptedLlm::new(0)
            .on("novel claims", "1. Claim one.\n2. Claim two.\n3. Claim three.")
            .on("hypothesis", "yes")
            .scores([("yes", -1.0), ("no", -3.0)])
    }

    #[test]
    fn identical_pair_and_probabilities() {
        let pairs = [IntroPair { id: "a".into(), generated: "Same text here.".into(), original: "Same text here.".into() }];
        let r = run_intro_eval(&pairs, &scripted(), &TemplateSet::builtin(), &IntroEvalOptions::default()).unwrap();
        assert_eq!(r.pairs[0].rouge.f1, 1.0);
        assert_eq!(r.claim_count, 3);
        assert_eq!(r.entailed, 3);
        for c in &r.pairs[0].claims {
            assert!((c.p_yes.unwrap() - 0.880797).abs() < 1e-6);
        }
        assert!(r.to_table().contains("claims: 3 entailed of 3"));
    }

    #[test]
    fn failures_isolated_per_pair() {
        let llm = Faulty::first(scripted(), 1, ProviderError::Rejected("quota".into()));
        let pairs = [
            IntroPair { id: "x".into(), generated: "g".into(), original: "o".into() },
            IntroPair { id: String::new(), generated: "g".into(), original: "o".into() },
        ];
        let r = run_intro_eval(&pairs, &llm, &TemplateSet::builtin(), &IntroEvalOptions { num_claims: 3, parallelism: 1 }).unwrap();
        assert_eq!(r.failed_pairs, 1);
        assert!(r.pairs[0].error.is_some());
        assert_eq!(r.pairs[1].id, "pair-1");
        assert_eq!(r.pairs[1].claims.len(), 3);
        assert!(run_intro_eval(&[], &llm, &TemplateSet::builtin(), &IntroEvalOptions::default()).is_err());
    }
}
