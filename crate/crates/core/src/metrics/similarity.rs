use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::bleu::pbleu;
use crate::metrics::MetricError;
use crate::sidecar::SidecarClient;
use crate::text::word_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Remote,
}

/// A text-pair similarity; higher means more similar.
pub trait SimilarityScorer: Send + Sync {
    fn id(&self) -> &str;

    fn locality(&self) -> Locality;

    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, MetricError>;

    fn score(&self, a: &str, b: &str) -> Result<f64, MetricError> {
        let mut v = self.score_pairs(&[(a.to_string(), b.to_string())])?;
        v.pop().ok_or(MetricError::EmptyInput("scores"))
    }
}

impl fmt::Debug for dyn SimilarityScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SimilarityScorer({})", self.id())
    }
}

/// Smoothed sentence BLEU of the first text against the second. Empty
/// candidates score 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct PBleuScorer;

impl SimilarityScorer for PBleuScorer {
    fn id(&self) -> &str {
        "pbleu"
    }

    fn locality(&self) -> Locality {
        Locality::Local
    }

    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, MetricError> {
        pairs
            .iter()
            .map(|(a, b)| {
                if a.trim().is_empty() {
                    Ok(0.0)
                } else {
                    pbleu(a, b)
                }
            })
            .collect()
    }
}

/// Bag-of-tokens F1 over lower-cased word tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1Scorer;

pub fn token_f1(a: &str, b: &str) -> f64 {
    let count = |s: &str| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for t in word_tokens(s) {
            *m.entry(t).or_default() += 1;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let (na, nb): (usize, usize) = (ca.values().sum(), cb.values().sum());
    if na == 0 || nb == 0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    let overlap: usize = ca
        .iter()
        .map(|(t, c)| (*c).min(cb.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / na as f64;
    let r = overlap as f64 / nb as f64;
    2.0 * p * r / (p + r)
}

impl SimilarityScorer for TokenF1Scorer {
    fn id(&self) -> &str {
        "token-f1"
    }

    fn locality(&self) -> Locality {
        Locality::Local
    }

    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, MetricError> {
        Ok(pairs.iter().map(|(a, b)| token_f1(a, b)).collect())
    }
}

/// Similarity computed by the scorer service (`bleurt`, `bertscore-precision`,
/// ...). The pair order sent is (candidate, reference).
#[derive(Debug, Clone)]
pub struct RemoteSimilarity {
    client: SidecarClient,
    metric: String,
}

impl RemoteSimilarity {
    pub fn new(client: SidecarClient, metric: impl Into<String>) -> Self {
        RemoteSimilarity {
            client,
            metric: metric.into(),
        }
    }
}

impl SimilarityScorer for RemoteSimilarity {
    fn id(&self) -> &str {
        &self.metric
    }

    fn locality(&self) -> Locality {
        Locality::Remote
    }

    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, MetricError> {
        self.client
            .similarity(pairs, &self.metric)
            .map_err(|e| MetricError::Remote(e.to_string()))
    }
}

/// Local scorer by identifier.
pub fn local_scorer(id: &str) -> Option<Box<dyn SimilarityScorer>> {
    match id {
        "pbleu" => Some(Box::new(PBleuScorer)),
        "token-f1" => Some(Box::new(TokenF1Scorer)),
        _ => None,
    }
}
