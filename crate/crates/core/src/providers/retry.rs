use std::sync::Arc;
use std::time::Duration;

use super::{
    ContinuationScore, Embedder, GenerationRequest, GenerationResult, LanguageModel, ProviderError,
};
use crate::vectorindex::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..Self::default()
        }
    }

    /// Delay before attempt `attempt + 1`, with `attempt` counted from 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * self.multiplier.saturating_pow(attempt.saturating_sub(1))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Runs `op` until it succeeds, fails with a non-retryable error, or runs out
/// of attempts.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    sleep: &dyn Fn(Duration),
    mut op: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let attempts = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempt >= attempts => {
                return Err(if attempts == 1 {
                    e
                } else {
                    ProviderError::RetriesExhausted {
                        attempts,
                        last: Box::new(e),
                    }
                })
            }
            Err(e) => {
                let delay = policy.delay_after(attempt);
                tracing::warn!(attempt, ?delay, error = %e, "provider call failed, retrying");
                sleep(delay);
                attempt += 1;
            }
        }
    }
}

/// Adds retries with exponential backoff to any provider.
pub struct Retrying<T> {
    inner: T,
    policy: RetryPolicy,
    sleeper: Sleeper,
}

impl<T> Retrying<T> {
    pub fn new(inner: T, policy: RetryPolicy) -> Self {
        Retrying {
            inner,
            policy,
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces the real sleep, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: LanguageModel> LanguageModel for Retrying<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        with_retry(&self.policy, &*self.sleeper, || self.inner.generate(request))
    }

    fn score_continuations(
        &self,
        prompt: &str,
        continuations: &[String],
    ) -> Result<Vec<ContinuationScore>, ProviderError> {
        with_retry(&self.policy, &*self.sleeper, || {
            self.inner.score_continuations(prompt, continuations)
        })
    }
}

impl<T: Embedder> Embedder for Retrying<T> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        with_retry(&self.policy, &*self.sleeper, || self.inner.embed(texts))
    }
}
