//! Deterministic stand-ins for model servers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    ContinuationScore, Embedder, FinishReason, GenerationRequest, GenerationResult, LanguageModel,
    ProviderError,
};
use crate::vectorindex::EmbeddingVector;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `bytes`, starting from the offset basis mixed with `seed`.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    Generate(String),
    Score { prompt: String, continuations: Vec<String> },
}

struct Rule {
    needle: String,
    responses: Vec<String>,
    next: AtomicUsize,
}

type GenerateFn = dyn Fn(&str) -> Option<String> + Send + Sync;
type ScoreFn = dyn Fn(&str, &str) -> Option<f64> + Send + Sync;

/// A language model driven by a script.
///
/// Generation checks, in order: the handler closure, then substring rules
/// (first rule whose needle occurs in the prompt; its responses are served
/// in sequence and the last one repeats). Unmatched prompts are echoed back
/// with [`FinishReason::MockFallback`].
///
/// Scoring uses the score closure, then the fixed table, then a seeded
/// pseudo-random log probability derived from the prompt and continuation.
pub struct ScriptedLlm {
    seed: u64,
    rules: Vec<Rule>,
    handler: Option<Arc<GenerateFn>>,
    score_fn: Option<Arc<ScoreFn>>,
    score_table: HashMap<String, f64>,
    scoring: bool,
    log: Mutex<Vec<Call>>,
}

impl ScriptedLlm {
    pub fn new(seed: u64) -> Self {
        ScriptedLlm {
            seed,
            rules: Vec::new(),
            handler: None,
            score_fn: None,
            score_table: HashMap::new(),
            scoring: true,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Answers prompts containing `needle` with `response`.
    pub fn on(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.on_sequence(needle, [response.into()])
    }

    /// Answers successive prompts containing `needle` with successive
    /// responses, repeating the last.
    pub fn on_sequence<I, S>(mut self, needle: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "a rule needs at least one response");
        self.rules.push(Rule {
            needle: needle.into(),
            responses,
            next: AtomicUsize::new(0),
        });
        self
    }

    pub fn with_handler(mut self, f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.handler = Some(Arc::new(f));
        self
    }

    /// Fixed log probabilities by continuation, regardless of prompt.
    pub fn scores<I, S>(mut self, table: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        self.score_table
            .extend(table.into_iter().map(|(k, v)| (k.into(), v)));
        self
    }

    pub fn with_scorer(mut self, f: impl Fn(&str, &str) -> Option<f64> + Send + Sync + 'static) -> Self {
        self.score_fn = Some(Arc::new(f));
        self
    }

    /// Makes [`LanguageModel::score_continuations`] fail with a capability
    /// error, like a generation-only endpoint.
    pub fn without_scoring(mut self) -> Self {
        self.scoring = false;
        self
    }

    pub fn calls(&self) -> Vec<Call> {
        self.log.lock().unwrap().clone()
    }

    pub fn generate_count(&self) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| matches!(c, Call::Generate(_)))
            .count()
    }

    pub fn score_count(&self) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| matches!(c, Call::Score { .. }))
            .count()
    }

    /// Seeded default: each character costs between 0.05 and 1.0 nats.
    fn default_logprob(&self, prompt: &str, continuation: &str) -> f64 {
        let base = fnv1a(self.seed, prompt.as_bytes());
        continuation
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let mut buf = [0u8; 4];
                let h = fnv1a(base ^ i as u64, c.encode_utf8(&mut buf).as_bytes());
                -(0.05 + 0.95 * (h >> 11) as f64 / (1u64 << 53) as f64)
            })
            .sum()
    }
}

impl LanguageModel for ScriptedLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.log
            .lock()
            .unwrap()
            .push(Call::Generate(request.prompt.clone()));
        if let Some(text) = self.handler.as_ref().and_then(|h| h(&request.prompt)) {
            return Ok(GenerationResult {
                text,
                finish_reason: FinishReason::Stop,
            });
        }
        if let Some(rule) = self.rules.iter().find(|r| request.prompt.contains(&r.needle)) {
            let i = rule.next.fetch_add(1, Ordering::SeqCst);
            let text = rule.responses[i.min(rule.responses.len() - 1)].clone();
            return Ok(GenerationResult {
                text,
                finish_reason: FinishReason::Stop,
            });
        }
        Ok(GenerationResult {
            text: request.prompt.clone(),
            finish_reason: FinishReason::MockFallback,
        })
    }

    fn score_continuations(
        &self,
        prompt: &str,
        continuations: &[String],
    ) -> Result<Vec<ContinuationScore>, ProviderError> {
        if !self.scoring {
            return Err(ProviderError::Capability(
                "scripted model configured without scoring".into(),
            ));
        }
        self.log.lock().unwrap().push(Call::Score {
            prompt: prompt.to_string(),
            continuations: continuations.to_vec(),
        });
        Ok(continuations
            .iter()
            .map(|c| {
                let logprob = self
                    .score_fn
                    .as_ref()
                    .and_then(|f| f(prompt, c))
                    .or_else(|| self.score_table.get(c).copied())
                    .unwrap_or_else(|| self.default_logprob(prompt, c));
                ContinuationScore {
                    continuation: c.clone(),
                    logprob,
                }
            })
            .collect())
    }
}

/// Feature-hashing embedder over character trigrams of the lowercased text.
/// Texts sharing many trigrams land close together, which is enough for
/// retrieval tests without a real model.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension, seed }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0f32; self.dimension];
        if text.trim().is_empty() {
            v[0] = 1.0;
            return EmbeddingVector::new(v).expect("finite");
        }
        let chars: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(self.seed, buf.as_bytes());
            let slot = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
        EmbeddingVector::new(v).expect("finite by construction")
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256, 0)
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Wraps a provider and makes chosen calls fail.
pub struct Faulty<T> {
    inner: T,
    fail_first: usize,
    fail_always: bool,
    error: ProviderError,
    calls: AtomicUsize,
}

impl<T> Faulty<T> {
    /// Fails the first `n` calls with `error`, then delegates.
    pub fn first(inner: T, n: usize, error: ProviderError) -> Self {
        Faulty {
            inner,
            fail_first: n,
            fail_always: false,
            error,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always(inner: T, error: ProviderError) -> Self {
        Faulty {
            inner,
            fail_first: 0,
            fail_always: true,
            error,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    fn tick(&self) -> Result<(), ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_always || n < self.fail_first {
            Err(self.error.clone())
        } else {
            Ok(())
        }
    }
}

impl<T: LanguageModel> LanguageModel for Faulty<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.tick()?;
        self.inner.generate(request)
    }

    fn score_continuations(
        &self,
        prompt: &str,
        continuations: &[String],
    ) -> Result<Vec<ContinuationScore>, ProviderError> {
        self.tick()?;
        self.inner.score_continuations(prompt, continuations)
    }
}

impl<T: Embedder> Embedder for Faulty<T> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.tick()?;
        self.inner.embed(texts)
    }
}
