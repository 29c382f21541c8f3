//! Semantic accuracy, surface similarity and correlation.

pub mod align;
pub mod bleu;
pub mod lexicon;
pub mod pearson;
pub mod similarity;

use thiserror::Error;

pub use align::{align_slots, ratio_to_f64, sacc, ser, MentionVerdict, SlotAlignment, SlotMention};
pub use bleu::{bleu, corpus_bleu, pbleu, sentence_bleu, BleuMode, BleuStats};
pub use lexicon::ValueLexicon;
pub use pearson::pearson;
pub use similarity::{
    local_scorer, token_f1, Locality, PBleuScorer, RemoteSimilarity, SimilarityScorer,
    TokenF1Scorer,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("slot error rate undefined for an MR with no slots")]
    NoSlots,
    #[error("lexicon has no entry for slot `{0}`")]
    MissingLexiconSlot(String),
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("remote scorer: {0}")]
    Remote(String),
    #[error("{0}")]
    Io(String),
}
