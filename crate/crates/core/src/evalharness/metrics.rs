use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Mean of `1 / rank` over 1-based ranks.
pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::UndefinedMetric("mrr of no ranks"));
    }
    if ranks.contains(&0) {
        return Err(EvalError::Input("ranks are 1-based".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of ranks within the top `k`.
pub fn precision_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::UndefinedMetric("precision of no ranks"));
    }
    if k == 0 {
        return Err(EvalError::Input("k must be at least 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Harmonic number `H(n) / n`: the expected reciprocal rank of one item
/// under a uniformly random ordering of `n`.
pub fn random_ranker_mrr(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Lowercased alphanumeric runs.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Unigram overlap with per-token counts clipped to the smaller side.
pub fn rouge1(candidate: &str, reference: &str) -> RougeScore {
    let cand = rouge_tokens(candidate);
    let refs = rouge_tokens(reference);
    if refs.is_empty() || cand.is_empty() {
        return RougeScore {
            recall: 0.0,
            precision: 0.0,
            f1: 0.0,
        };
    }
    let cc = counts(&cand);
    let overlap: usize = counts(&refs)
        .iter()
        .map(|(t, &n)| n.min(cc.get(t).copied().unwrap_or(0)))
        .sum();
    let recall = overlap as f64 / refs.len() as f64;
    let precision = overlap as f64 / cand.len() as f64;
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    RougeScore {
        recall,
        precision,
        f1,
    }
}
