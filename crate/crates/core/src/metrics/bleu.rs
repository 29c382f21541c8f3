//! 4-gram BLEU with brevity penalty.
//!
//! Sentence mode applies add-one smoothing to the 2..4-gram precisions;
//! corpus mode sums n-gram statistics over all segments before taking ratios
//! and is unsmoothed. Tokens are lower-cased words and punctuation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricError;
use crate::text::word_tokens;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuMode {
    Sentence,
    CorpusAccumulate,
}

/// Sufficient statistics for BLEU over one or more segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.candidate_len += rhs.candidate_len;
        self.reference_len += rhs.reference_len;
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn from_segment(candidate: &str, references: &[&str]) -> Result<Self, MetricError> {
        if candidate.trim().is_empty() {
            return Err(MetricError::EmptyInput("candidate"));
        }
        if references.is_empty() || references.iter().all(|r| r.trim().is_empty()) {
            return Err(MetricError::EmptyInput("references"));
        }
        let cand = word_tokens(candidate);
        let refs: Vec<Vec<String>> = references.iter().map(|r| word_tokens(r)).collect();

        let mut stats = BleuStats {
            candidate_len: cand.len() as u64,
            reference_len: closest_ref_len(cand.len(), &refs) as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let cand_counts = ngram_counts(&cand, n);
            let mut max_ref: HashMap<&[String], u64> = HashMap::new();
            for r in &refs {
                for (gram, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            stats.totals[n - 1] = cand.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = cand_counts
                .iter()
                .map(|(gram, c)| (*c).min(max_ref.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        Ok(stats)
    }

    /// BLEU from accumulated statistics. `smooth` adds one to the numerator
    /// and denominator of every precision above unigrams.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = if smooth && n > 0 {
                (self.matches[n] + 1, self.totals[n] + 1)
            } else {
                (self.matches[n], self.totals[n])
            };
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let bp = if self.candidate_len >= self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        };
        bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// Reference length closest to the candidate length, shorter on ties.
fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(cand_len), len))
        .unwrap_or(0)
}

pub fn bleu(candidate: &str, references: &[&str], mode: BleuMode) -> Result<f64, MetricError> {
    let stats = BleuStats::from_segment(candidate, references)?;
    Ok(stats.score(mode == BleuMode::Sentence))
}

pub fn sentence_bleu(candidate: &str, references: &[&str]) -> Result<f64, MetricError> {
    bleu(candidate, references, BleuMode::Sentence)
}

/// Corpus BLEU over parallel candidate/reference-set lists.
pub fn corpus_bleu<S: AsRef<str>>(
    candidates: &[S],
    references: &[Vec<S>],
) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::EmptyInput("candidates"));
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch(candidates.len(), references.len()));
    }
    let mut total = BleuStats::default();
    for (cand, refs) in candidates.iter().zip(references) {
        let refs: Vec<&str> = refs.iter().map(AsRef::as_ref).collect();
        total += BleuStats::from_segment(cand.as_ref(), &refs)?;
    }
    Ok(total.score(false))
}

/// Sentence BLEU of a candidate against a single pseudo-reference.
pub fn pbleu(candidate: &str, pseudo_reference: &str) -> Result<f64, MetricError> {
    sentence_bleu(candidate, &[pseudo_reference])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        let s = "nameVariable is a pub in the city centre.";
        assert_eq!(sentence_bleu(s, &[s]).unwrap(), 1.0);
        assert_eq!(bleu(s, &[s], BleuMode::CorpusAccumulate).unwrap(), 1.0);
        assert_eq!(sentence_bleu("alpha beta", &["gamma delta"]).unwrap(), 0.0);
    }

    #[test]
    fn short_identity_is_one_in_sentence_mode() {
        assert_eq!(sentence_bleu("pub", &["pub"]).unwrap(), 1.0);
        // corpus mode has no 4-grams to match
        assert_eq!(bleu("pub", &["pub"], BleuMode::CorpusAccumulate).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty() {
        // all n-grams match but the candidate is half the reference length
        let cand = "a b c d";
        let reference = "a b c d e f g h";
        let got = bleu(cand, &[reference], BleuMode::CorpusAccumulate).unwrap();
        assert!((got - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn clipped_counts() {
        let stats = BleuStats::from_segment("the the the the", &["the cat"]).unwrap();
        assert_eq!(stats.matches[0], 1);
        assert_eq!(stats.totals[0], 4);
    }

    #[test]
    fn case_insensitive() {
        let a = sentence_bleu("NameVariable Is A Pub", &["namevariable is a cheap pub"]).unwrap();
        let b = sentence_bleu("namevariable is a pub", &["namevariable is a cheap pub"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(sentence_bleu("", &["x"]), Err(MetricError::EmptyInput("candidate")));
        assert_eq!(sentence_bleu("x", &[]), Err(MetricError::EmptyInput("references")));
        assert!(corpus_bleu::<&str>(&[], &[]).is_err());
    }
}
