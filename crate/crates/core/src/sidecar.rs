//! Client for the neural scorer service.
//!
//! Wire protocol (JSON over HTTP):
//!
//! ```text
//! POST /classify   {"texts": [..]}                      -> {"probs": [[5 floats], ..]}
//! POST /similarity {"pairs": [[a, b], ..], "metric": m}  -> {"scores": [..]}
//! POST /logprob    {"texts": [..]}                      -> {"logprobs": [..]}
//! GET  /health                                          -> {"models": {name: loaded}}
//! ```
//!
//! Classifier probabilities are ordered alphabetically by personality label,
//! matching [`Personality::ALL`](crate::mr::Personality::ALL).

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SidecarError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service unhealthy: {0}")]
    Unhealthy(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("required model `{0}` is not loaded")]
    ModelMissing(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub models: BTreeMap<String, bool>,
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct SimilarityRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
    metric: &'a str,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    probs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct SimilarityResponse {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct LogprobResponse {
    logprobs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SidecarClient {
    base_url: String,
    agent: ureq::Agent,
    max_batch: usize,
    max_in_flight: usize,
}

impl SidecarClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        SidecarClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            max_batch: DEFAULT_MAX_BATCH,
            max_in_flight: 4,
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<Health, SidecarError> {
        let url = format!("{}/health", self.base_url);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| SidecarError::Transport(e.to_string()))?;
        read_json(resp)
    }

    /// Fails unless every named model reports as loaded.
    pub fn require_models(&self, models: &[&str]) -> Result<(), SidecarError> {
        let health = self.health()?;
        for m in models {
            if !health.models.get(*m).copied().unwrap_or(false) {
                return Err(SidecarError::ModelMissing((*m).to_string()));
            }
        }
        Ok(())
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, SidecarError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| SidecarError::Transport(e.to_string()))?;
        read_json(resp)
    }

    pub fn classify(&self, texts: &[String]) -> Result<Vec<[f64; 5]>, SidecarError> {
        self.batched(texts, |chunk| {
            let resp: ClassifyResponse = self.post("/classify", &TextsRequest { texts: chunk })?;
            if resp.probs.len() != chunk.len() {
                return Err(SidecarError::Malformed(format!(
                    "expected {} distributions, got {}",
                    chunk.len(),
                    resp.probs.len()
                )));
            }
            resp.probs
                .into_iter()
                .map(|row| {
                    <[f64; 5]>::try_from(row.as_slice()).map_err(|_| {
                        SidecarError::Malformed(format!("expected 5 probabilities, got {}", row.len()))
                    })
                })
                .collect()
        })
    }

    pub fn similarity(
        &self,
        pairs: &[(String, String)],
        metric: &str,
    ) -> Result<Vec<f64>, SidecarError> {
        self.batched(pairs, |chunk| {
            let body = SimilarityRequest {
                pairs: chunk.iter().map(|(a, b)| [a.as_str(), b.as_str()]).collect(),
                metric,
            };
            let resp: SimilarityResponse = self.post("/similarity", &body)?;
            expect_len(resp.scores, chunk.len())
        })
    }

    pub fn logprob(&self, texts: &[String]) -> Result<Vec<f64>, SidecarError> {
        self.batched(texts, |chunk| {
            let resp: LogprobResponse = self.post("/logprob", &TextsRequest { texts: chunk })?;
            expect_len(resp.logprobs, chunk.len())
        })
    }

    /// Splits `items` into batches of at most `max_batch` and runs up to
    /// `max_in_flight` of them at a time. Output order follows input order.
    fn batched<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>, SidecarError>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> Result<Vec<R>, SidecarError> + Sync,
    {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[T]> = items.chunks(self.max_batch).collect();
        let mut out = Vec::with_capacity(items.len());
        for wave in chunks.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<R>, SidecarError>> = if wave.len() == 1 {
                vec![f(wave[0])]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|chunk| {
                            let f = &f;
                            scope.spawn(move || f(chunk))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("sidecar worker panicked"))
                        .collect()
                })
            };
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

fn expect_len(values: Vec<f64>, expected: usize) -> Result<Vec<f64>, SidecarError> {
    if values.len() != expected {
        return Err(SidecarError::Malformed(format!(
            "expected {expected} values, got {}",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(SidecarError::Malformed(format!("non-finite value {bad}")));
    }
    Ok(values)
}

fn read_json<R: DeserializeOwned>(
    mut resp: ureq::http::Response<ureq::Body>,
) -> Result<R, SidecarError> {
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| SidecarError::Transport(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&body).map_err(|e| SidecarError::Malformed(e.to_string())),
        503 => Err(SidecarError::Unhealthy(body)),
        _ => Err(SidecarError::Http { status, body }),
    }
}
