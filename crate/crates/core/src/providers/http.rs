//! JSON-over-HTTP clients for model servers.
//!
//! Wire contract:
//! - `POST {url}/generate` `{prompt, max_tokens, temperature, stop}` →
//!   `{text, finish_reason}`
//! - `POST {url}/score` `{prompt, continuations}` →
//!   `{scores: [{continuation, logprob}]}`; 501 means unsupported
//! - `POST {url}/embed` `{texts}` → `{vectors}`

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    ContinuationScore, Embedder, FinishReason, GenerationRequest, GenerationResult, LanguageModel,
    ProviderError,
};
use crate::vectorindex::EmbeddingVector;

pub const DEFAULT_PARALLELISM: usize = 8;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpEndpoint {
    pub url: String,
    pub key: Option<String>,
    pub timeout: Duration,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Self {
        HttpEndpoint {
            url: url.into().trim_end_matches('/').to_string(),
            key,
            timeout: Duration::from_secs(120),
        }
    }
}

struct Client {
    endpoint: HttpEndpoint,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl Client {
    fn new(endpoint: HttpEndpoint, parallelism: usize) -> Result<Self, ProviderError> {
        if !(endpoint.url.starts_with("http://") || endpoint.url.starts_with("https://")) {
            return Err(ProviderError::Config(format!(
                "provider url must start with http:// or https://, got '{}'",
                endpoint.url
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Client {
            endpoint,
            agent,
            limiter: Limiter::new(parallelism),
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ProviderError> {
        let _permit = self.limiter.acquire();
        let url = format!("{}/{}", self.endpoint.url, path);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.endpoint.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let message = resp.body_mut().read_to_string().unwrap_or_default();
            let message = message.chars().take(500).collect::<String>();
            return Err(if status == 501 {
                ProviderError::Capability(format!("{path} not supported: {message}"))
            } else {
                ProviderError::Server { status, message }
            });
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| ProviderError::InvalidResponse(format!("{url}: {e}")))
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuations: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<ContinuationScore>,
}

/// Language model served over HTTP.
pub struct HttpLlm {
    client: Client,
}

impl HttpLlm {
    pub fn new(endpoint: HttpEndpoint, parallelism: usize) -> Result<Self, ProviderError> {
        Ok(HttpLlm {
            client: Client::new(endpoint, parallelism)?,
        })
    }

    pub fn endpoint(&self) -> &HttpEndpoint {
        &self.client.endpoint
    }
}

impl LanguageModel for HttpLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let resp: GenerateResponse = self.client.post("generate", request)?;
        let finish_reason = match resp.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(GenerationResult {
            text: resp.text,
            finish_reason,
        })
    }

    fn score_continuations(
        &self,
        prompt: &str,
        continuations: &[String],
    ) -> Result<Vec<ContinuationScore>, ProviderError> {
        let resp: ScoreResponse = self.client.post(
            "score",
            &ScoreRequest {
                prompt,
                continuations,
            },
        )?;
        Ok(resp.scores)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Embedding model served over HTTP.
pub struct HttpEmbedder {
    client: Client,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, dimension: usize, parallelism: usize) -> Result<Self, ProviderError> {
        Ok(HttpEmbedder {
            client: Client::new(endpoint, parallelism)?,
            dimension,
        })
    }

    /// Learns the dimension by embedding a probe text.
    pub fn probe(endpoint: HttpEndpoint, parallelism: usize) -> Result<Self, ProviderError> {
        let mut e = HttpEmbedder::new(endpoint, 0, parallelism)?;
        let v = e.raw_embed(&["dimension probe".to_string()])?;
        e.dimension = v
            .first()
            .map(|v| v.dimension())
            .ok_or_else(|| ProviderError::InvalidResponse("empty probe response".into()))?;
        Ok(e)
    }

    fn raw_embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let resp: EmbedResponse = self.client.post("embed", &EmbedRequest { texts })?;
        resp.vectors
            .into_iter()
            .map(|v| {
                EmbeddingVector::new(v)
                    .map_err(|e| ProviderError::InvalidResponse(format!("embedding: {e}")))
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.raw_embed(texts)
    }
}
