//! Personality strength: a lexical marker scorer that runs locally, and a
//! client for the neural classifier hosted by the scorer service.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mr::Personality;
use crate::sidecar::{SidecarClient, SidecarError};
use crate::text::word_tokens;

const BUILTIN_MARKERS: &str = include_str!("../data/markers.tsv");

/// Minimum number of positive patterns per personality.
pub const MIN_PATTERNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StyleError {
    #[error("cannot classify empty text")]
    EmptyText,
    #[error("marker lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("personality {0} has fewer than {MIN_PATTERNS} marker patterns")]
    TooFewPatterns(Personality),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("classifier transport failure: {0}")]
    Transport(String),
    #[error("classifier returned a malformed response: {0}")]
    Malformed(String),
    #[error("classifier service unhealthy: {0}")]
    Unhealthy(String),
    #[error("{0}")]
    Io(String),
}

impl From<SidecarError> for StyleError {
    fn from(e: SidecarError) -> Self {
        match e {
            SidecarError::Transport(m) => StyleError::Transport(m),
            SidecarError::Malformed(m) => StyleError::Malformed(m),
            SidecarError::Unhealthy(m) | SidecarError::ModelMissing(m) => StyleError::Unhealthy(m),
            SidecarError::Http { status, body } => {
                StyleError::Malformed(format!("HTTP {status}: {body}"))
            }
        }
    }
}

/// Probability per personality, indexed in [`Personality::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleDistribution {
    probs: [f64; 5],
}

impl StyleDistribution {
    pub fn uniform() -> Self {
        StyleDistribution { probs: [0.2; 5] }
    }

    /// Accepts probabilities that are non-negative and sum to one within
    /// `1e-4`, then renormalizes exactly.
    pub fn from_probs(probs: [f64; 5]) -> Result<Self, StyleError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(StyleError::InvalidDistribution(format!("{probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(StyleError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(StyleDistribution {
            probs: probs.map(|p| p / sum),
        })
    }

    /// Softmax of per-personality evidence.
    pub fn from_evidence(evidence: [f64; 5], temperature: f64) -> Self {
        let scaled = evidence.map(|e| e / temperature);
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = scaled.map(|s| (s - max).exp());
        let sum: f64 = exps.iter().sum();
        StyleDistribution {
            probs: exps.map(|e| e / sum),
        }
    }

    pub fn prob(&self, p: Personality) -> f64 {
        self.probs[p.index()]
    }

    pub fn probs(&self) -> &[f64; 5] {
        &self.probs
    }

    /// Most probable personality; ties go to the earlier label.
    pub fn argmax(&self) -> Personality {
        let mut best = 0;
        for i in 1..5 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Personality::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPattern {
    pub phrase: String,
    pub tokens: Vec<String>,
    pub weight: f64,
}

/// Marker phrases per personality plus negative-evidence phrases.
///
/// File format: `personality<TAB>phrase<TAB>weight`, with a leading `-` on
/// the personality for negative evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLexicon {
    positive: [Vec<MarkerPattern>; 5],
    negative: [Vec<MarkerPattern>; 5],
}

impl MarkerLexicon {
    pub fn parse(text: &str) -> Result<Self, StyleError> {
        let mut positive: [Vec<MarkerPattern>; 5] = Default::default();
        let mut negative: [Vec<MarkerPattern>; 5] = Default::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: &str| StyleError::Lexicon {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err("expected personality<TAB>phrase<TAB>weight"));
            }
            let (label, negated) = match fields[0].trim().strip_prefix('-') {
                Some(rest) => (rest, true),
                None => (fields[0].trim(), false),
            };
            let personality: Personality = label.parse().map_err(|_| err("unknown personality"))?;
            let weight: f64 = fields[2].trim().parse().map_err(|_| err("weight is not a number"))?;
            if !weight.is_finite() || weight <= 0.0 {
                return Err(err("weight must be finite and positive"));
            }
            let tokens = word_tokens(fields[1]);
            if tokens.is_empty() {
                return Err(err("empty phrase"));
            }
            let pattern = MarkerPattern {
                phrase: fields[1].trim().to_string(),
                tokens,
                weight,
            };
            let target = if negated { &mut negative } else { &mut positive };
            target[personality.index()].push(pattern);
        }
        for p in Personality::ALL {
            if positive[p.index()].len() < MIN_PATTERNS {
                return Err(StyleError::TooFewPatterns(p));
            }
        }
        Ok(MarkerLexicon { positive, negative })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StyleError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| StyleError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_MARKERS).expect("builtin marker lexicon is well formed")
    }

    pub fn patterns(&self, p: Personality) -> &[MarkerPattern] {
        &self.positive[p.index()]
    }

    pub fn negative_patterns(&self, p: Personality) -> &[MarkerPattern] {
        &self.negative[p.index()]
    }

    /// Replaces the weight of every pattern (positive or negative) whose
    /// personality and phrase match a line of `calibration`, which uses the
    /// same format as the lexicon itself.
    pub fn apply_calibration(&mut self, calibration: &str) -> Result<(), StyleError> {
        for (i, raw) in calibration.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: &str| StyleError::Lexicon {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err("expected personality<TAB>phrase<TAB>weight"));
            }
            let (label, negated) = match fields[0].trim().strip_prefix('-') {
                Some(rest) => (rest, true),
                None => (fields[0].trim(), false),
            };
            let personality: Personality = label.parse().map_err(|_| err("unknown personality"))?;
            let weight: f64 = fields[2].trim().parse().map_err(|_| err("weight is not a number"))?;
            if !weight.is_finite() || weight <= 0.0 {
                return Err(err("weight must be finite and positive"));
            }
            let tokens = word_tokens(fields[1]);
            let list = if negated {
                &mut self.negative[personality.index()]
            } else {
                &mut self.positive[personality.index()]
            };
            let pattern = list
                .iter_mut()
                .find(|m| m.tokens == tokens)
                .ok_or_else(|| err("no such pattern"))?;
            pattern.weight = weight;
        }
        Ok(())
    }
}

/// Non-overlapping occurrences of `pattern` in `tokens`.
fn count_occurrences(tokens: &[String], pattern: &[String]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i + pattern.len() <= tokens.len() {
        if tokens[i..i + pattern.len()] == *pattern {
            count += 1;
            i += pattern.len();
        } else {
            i += 1;
        }
    }
    count
}

/// Lexical marker scorer: evidence is the weighted count of matched
/// patterns, and the distribution is its softmax.
#[derive(Debug, Clone)]
pub struct LocalStyleScorer {
    lexicon: MarkerLexicon,
    temperature: f64,
}

impl Default for LocalStyleScorer {
    fn default() -> Self {
        LocalStyleScorer::new(MarkerLexicon::builtin())
    }
}

impl LocalStyleScorer {
    pub fn new(lexicon: MarkerLexicon) -> Self {
        LocalStyleScorer {
            lexicon,
            temperature: 1.0,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature > 0.0 && temperature.is_finite());
        self.temperature = temperature;
        self
    }

    pub fn lexicon(&self) -> &MarkerLexicon {
        &self.lexicon
    }

    pub fn evidence(&self, text: &str) -> [f64; 5] {
        let tokens = word_tokens(text);
        let score = |patterns: &[MarkerPattern]| -> f64 {
            patterns
                .iter()
                .map(|m| m.weight * count_occurrences(&tokens, &m.tokens) as f64)
                .sum()
        };
        Personality::ALL.map(|p| {
            score(self.lexicon.patterns(p)) - score(self.lexicon.negative_patterns(p))
        })
    }

    pub fn classify(&self, text: &str) -> Result<StyleDistribution, StyleError> {
        if text.trim().is_empty() {
            return Err(StyleError::EmptyText);
        }
        Ok(StyleDistribution::from_evidence(
            self.evidence(text),
            self.temperature,
        ))
    }
}

pub trait StyleClassifier: Send + Sync {
    fn id(&self) -> &str;

    fn classify_batch(&self, texts: &[String]) -> Result<Vec<StyleDistribution>, StyleError>;
}

impl fmt::Debug for dyn StyleClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StyleClassifier({})", self.id())
    }
}

impl StyleClassifier for LocalStyleScorer {
    fn id(&self) -> &str {
        "local"
    }

    fn classify_batch(&self, texts: &[String]) -> Result<Vec<StyleDistribution>, StyleError> {
        texts.iter().map(|t| self.classify(t)).collect()
    }
}

/// Neural classifier behind the scorer service.
#[derive(Debug, Clone)]
pub struct RemoteStyleClassifier {
    client: SidecarClient,
}

impl RemoteStyleClassifier {
    pub fn new(client: SidecarClient) -> Self {
        RemoteStyleClassifier { client }
    }
}

impl StyleClassifier for RemoteStyleClassifier {
    fn id(&self) -> &str {
        "remote"
    }

    fn classify_batch(&self, texts: &[String]) -> Result<Vec<StyleDistribution>, StyleError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(StyleError::EmptyText);
        }
        self.client
            .classify(texts)?
            .into_iter()
            .map(|probs| {
                StyleDistribution::from_probs(probs).map_err(|e| StyleError::Malformed(e.to_string()))
            })
            .collect()
    }
}

/// Uses `primary` and switches to `fallback` when the primary reports a
/// transport or health failure. Malformed responses are not masked.
pub struct FallbackClassifier<P, F> {
    primary: P,
    fallback: F,
}

impl<P: StyleClassifier, F: StyleClassifier> FallbackClassifier<P, F> {
    pub fn new(primary: P, fallback: F) -> Self {
        FallbackClassifier { primary, fallback }
    }
}

impl<P: StyleClassifier, F: StyleClassifier> StyleClassifier for FallbackClassifier<P, F> {
    fn id(&self) -> &str {
        self.primary.id()
    }

    fn classify_batch(&self, texts: &[String]) -> Result<Vec<StyleDistribution>, StyleError> {
        match self.primary.classify_batch(texts) {
            Err(StyleError::Transport(e) | StyleError::Unhealthy(e)) => {
                log::warn!("style classifier unavailable ({e}); using {}", self.fallback.id());
                self.fallback.classify_batch(texts)
            }
            other => other,
        }
    }
}

/// Fraction of distributions whose argmax is the target personality.
pub fn pac_from_distributions(items: &[(StyleDistribution, Personality)]) -> Result<f64, StyleError> {
    if items.is_empty() {
        return Err(StyleError::EmptyText);
    }
    let hits = items.iter().filter(|(d, p)| d.argmax() == *p).count();
    Ok(hits as f64 / items.len() as f64)
}

/// Personality accuracy of `(text, target)` pairs under `classifier`.
pub fn pac(
    selected: &[(String, Personality)],
    classifier: &dyn StyleClassifier,
) -> Result<f64, StyleError> {
    let texts: Vec<String> = selected.iter().map(|(t, _)| t.clone()).collect();
    let dists = classifier.classify_batch(&texts)?;
    let pairs: Vec<_> = dists
        .into_iter()
        .zip(selected.iter().map(|(_, p)| *p))
        .collect();
    pac_from_distributions(&pairs)
}
