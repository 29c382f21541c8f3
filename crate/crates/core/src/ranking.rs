//! Candidate scoring and ranking-function products.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Candidate, FluencyProvider};
use crate::linearizer::Linearizer;
use crate::metrics::{align_slots, pbleu, ratio_to_f64, SimilarityScorer, ValueLexicon};
use crate::mr::{Domain, MeaningRepresentation, Personality};
use crate::style::{StyleClassifier, StyleDistribution};

/// Floor applied to probability terms before multiplication.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("{rf} needs the `{term}` term, which was not computed")]
    MissingTerm { rf: String, term: Term },
    #[error("nothing to rank")]
    Empty,
    #[error("scoring candidate {prompt_id}#{index}: {reason}")]
    Scorer {
        prompt_id: String,
        index: usize,
        reason: String,
    },
    #[error("unknown ranking function `{0}`")]
    Unknown(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Sacc,
    Pac,
    Fluency,
    Pbleu,
    Pbbleu,
    Pbleurt,
    Pbert,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Sacc => "sacc",
            Term::Pac => "pac",
            Term::Fluency => "fluency",
            Term::Pbleu => "pbleu",
            Term::Pbbleu => "pbbleu",
            Term::Pbleurt => "pbleurt",
            Term::Pbert => "pbert",
        })
    }
}

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "sacc" => Term::Sacc,
            "pac" => Term::Pac,
            "fluency" | "p(s)" => Term::Fluency,
            "pbleu" => Term::Pbleu,
            "pbbleu" => Term::Pbbleu,
            "pbleurt" => Term::Pbleurt,
            "pbert" => Term::Pbert,
            other => return Err(format!("unknown term `{other}`")),
        })
    }
}

/// Per-candidate inputs to the ranking functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub prompt_id: String,
    pub generation_index: usize,
    pub text: String,
    pub target: Personality,
    /// S + D + R + H.
    pub slot_errors: u32,
    pub slot_count: u32,
    /// Unclamped; negative when errors exceed slots.
    pub sacc: f64,
    pub pac_prob: f64,
    pub predicted: Personality,
    pub fluency: f64,
    pub pbleu: Option<f64>,
    pub pbbleu: Option<f64>,
    pub pbleurt: Option<f64>,
    pub pbert: Option<f64>,
}

impl CandidateScore {
    pub fn term(&self, term: Term) -> Option<f64> {
        match term {
            Term::Sacc => Some(self.sacc),
            Term::Pac => Some(self.pac_prob),
            Term::Fluency => Some(self.fluency),
            Term::Pbleu => self.pbleu,
            Term::Pbbleu => self.pbbleu,
            Term::Pbleurt => self.pbleurt,
            Term::Pbert => self.pbert,
        }
    }

    pub fn is_semantically_perfect(&self) -> bool {
        self.slot_errors == 0
    }

    pub fn personality_correct(&self) -> bool {
        self.predicted == self.target
    }

    /// No slot errors and the classified personality is the target.
    pub fn is_perfect(&self) -> bool {
        self.is_semantically_perfect() && self.personality_correct()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RankingFunction {
    Rf1,
    Rf2,
    Rf3,
    Rf4,
    Rf5,
    /// Any other product of terms.
    Custom(Vec<Term>),
}

impl RankingFunction {
    pub const PUBLISHED: [RankingFunction; 5] = [
        RankingFunction::Rf1,
        RankingFunction::Rf2,
        RankingFunction::Rf3,
        RankingFunction::Rf4,
        RankingFunction::Rf5,
    ];

    pub fn terms(&self) -> Vec<Term> {
        use Term::*;
        match self {
            RankingFunction::Rf1 => vec![Sacc, Pac, Fluency],
            RankingFunction::Rf2 => vec![Sacc, Pac, Fluency, Pbleu],
            RankingFunction::Rf3 => vec![Pbbleu, Pac, Fluency],
            RankingFunction::Rf4 => vec![Pbleurt, Pac, Fluency],
            RankingFunction::Rf5 => vec![Pbert, Pac, Fluency],
            RankingFunction::Custom(terms) => terms.clone(),
        }
    }

    /// Product of the terms, with `pac` and `fluency` floored at
    /// [`PROB_FLOOR`] and `sacc` floored at zero.
    pub fn value(&self, score: &CandidateScore) -> Result<f64, RankError> {
        let mut product = 1.0;
        for term in self.terms() {
            let raw = score.term(term).ok_or_else(|| RankError::MissingTerm {
                rf: self.to_string(),
                term,
            })?;
            product *= match term {
                Term::Sacc => raw.max(0.0),
                Term::Pac | Term::Fluency => raw.max(PROB_FLOOR),
                _ => raw,
            };
        }
        Ok(product)
    }
}

impl fmt::Display for RankingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingFunction::Rf1 => f.write_str("RF1"),
            RankingFunction::Rf2 => f.write_str("RF2"),
            RankingFunction::Rf3 => f.write_str("RF3"),
            RankingFunction::Rf4 => f.write_str("RF4"),
            RankingFunction::Rf5 => f.write_str("RF5"),
            RankingFunction::Custom(terms) => {
                let names: Vec<String> = terms.iter().map(Term::to_string).collect();
                f.write_str(&names.join("*"))
            }
        }
    }
}

impl FromStr for RankingFunction {
    type Err = RankError;

    /// `rf1`..`rf5`, or a product such as `sacc*pac`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf1" => Ok(RankingFunction::Rf1),
            "rf2" => Ok(RankingFunction::Rf2),
            "rf3" => Ok(RankingFunction::Rf3),
            "rf4" => Ok(RankingFunction::Rf4),
            "rf5" => Ok(RankingFunction::Rf5),
            other => other
                .split('*')
                .map(str::parse::<Term>)
                .collect::<Result<Vec<_>, _>>()
                .map(RankingFunction::Custom)
                .map_err(|_| RankError::Unknown(s.to_string())),
        }
    }
}

/// Everything needed to score a candidate pool.
pub struct Scorers<'a> {
    pub restaurant_lexicon: &'a ValueLexicon,
    pub videogame_lexicon: &'a ValueLexicon,
    pub linearizer: &'a Linearizer,
    pub classifier: &'a dyn StyleClassifier,
    pub fluency: &'a dyn FluencyProvider,
    pub pbbleu: Option<&'a dyn SimilarityScorer>,
    pub pbleurt: Option<&'a dyn SimilarityScorer>,
    pub pbert: Option<&'a dyn SimilarityScorer>,
}

impl Scorers<'_> {
    fn lexicon(&self, domain: Domain) -> &ValueLexicon {
        match domain {
            Domain::Restaurant => self.restaurant_lexicon,
            Domain::VideoGame => self.videogame_lexicon,
        }
    }
}

/// Scores every candidate generated for `mr`. Provider calls are batched
/// over the pool. Empty candidates get a uniform style distribution, the
/// fluency floor and zero similarity.
pub fn score_pool(
    candidates: &[Candidate],
    mr: &MeaningRepresentation,
    target: Personality,
    scorers: &Scorers<'_>,
) -> Result<Vec<CandidateScore>, RankError> {
    let fail = |c: &Candidate, reason: String| RankError::Scorer {
        prompt_id: c.prompt_id.clone(),
        index: c.generation_index,
        reason,
    };
    let first = match candidates.first() {
        Some(c) => c,
        None => return Ok(Vec::new()),
    };
    let pseudo = scorers.linearizer.linearize(mr);
    let lexicon = scorers.lexicon(mr.domain());

    let live: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].text.trim().is_empty())
        .collect();
    let live_texts: Vec<String> = live.iter().map(|&i| candidates[i].text.clone()).collect();

    let mut styles = vec![StyleDistribution::uniform(); candidates.len()];
    let mut fluency = vec![PROB_FLOOR; candidates.len()];
    if !live.is_empty() {
        let dists = scorers
            .classifier
            .classify_batch(&live_texts)
            .map_err(|e| fail(first, e.to_string()))?;
        let flu = scorers
            .fluency
            .fluency_batch(&live_texts)
            .map_err(|e| fail(first, e.to_string()))?;
        for (k, &i) in live.iter().enumerate() {
            styles[i] = dists[k];
            fluency[i] = flu[k];
        }
    }

    let remote_terms = |scorer: Option<&dyn SimilarityScorer>| -> Result<Option<Vec<f64>>, RankError> {
        let Some(scorer) = scorer else {
            return Ok(None);
        };
        let mut out = vec![0.0; candidates.len()];
        if !live.is_empty() {
            let pairs: Vec<(String, String)> =
                live_texts.iter().map(|t| (t.clone(), pseudo.clone())).collect();
            let scores = scorer
                .score_pairs(&pairs)
                .map_err(|e| fail(first, e.to_string()))?;
            for (k, &i) in live.iter().enumerate() {
                out[i] = scores[k];
            }
        }
        Ok(Some(out))
    };
    let pbbleu = remote_terms(scorers.pbbleu)?;
    let pbleurt = remote_terms(scorers.pbleurt)?;
    let pbert = remote_terms(scorers.pbert)?;

    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let alignment = align_slots(&c.text, mr, lexicon).map_err(|e| fail(c, e.to_string()))?;
            let sacc = alignment.sacc().map_err(|e| fail(c, e.to_string()))?;
            let pb = if c.text.trim().is_empty() {
                0.0
            } else {
                pbleu(&c.text, &pseudo).map_err(|e| fail(c, e.to_string()))?
            };
            Ok(CandidateScore {
                prompt_id: c.prompt_id.clone(),
                generation_index: c.generation_index,
                text: c.text.clone(),
                target,
                slot_errors: alignment.errors(),
                slot_count: alignment.slot_count,
                sacc: ratio_to_f64(sacc),
                pac_prob: styles[i].prob(target),
                predicted: styles[i].argmax(),
                fluency: fluency[i],
                pbleu: Some(pb),
                pbbleu: pbbleu.as_ref().map(|v| v[i]),
                pbleurt: pbleurt.as_ref().map(|v| v[i]),
                pbert: pbert.as_ref().map(|v| v[i]),
            })
        })
        .collect()
}

pub fn score_candidate(
    candidate: &Candidate,
    mr: &MeaningRepresentation,
    target: Personality,
    scorers: &Scorers<'_>,
) -> Result<CandidateScore, RankError> {
    let mut v = score_pool(std::slice::from_ref(candidate), mr, target, scorers)?;
    Ok(v.pop().expect("one candidate in, one score out"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    /// 1-based.
    pub rank: usize,
    pub value: f64,
    pub score: CandidateScore,
}

/// Orders by ranking value (descending), then sacc (descending), then
/// generation index (ascending).
pub fn rank(scores: &[CandidateScore], rf: &RankingFunction) -> Result<Vec<RankedCandidate>, RankError> {
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    let mut valued: Vec<(f64, &CandidateScore)> = scores
        .iter()
        .map(|s| rf.value(s).map(|v| (v, s)))
        .collect::<Result<_, _>>()?;
    valued.sort_by(|(va, a), (vb, b)| {
        vb.total_cmp(va)
            .then_with(|| b.sacc.total_cmp(&a.sacc))
            .then_with(|| a.generation_index.cmp(&b.generation_index))
    });
    Ok(valued
        .into_iter()
        .enumerate()
        .map(|(i, (value, s))| RankedCandidate {
            rank: i + 1,
            value,
            score: s.clone(),
        })
        .collect())
}

/// The top-ranked candidate.
pub fn select_best(scores: &[CandidateScore], rf: &RankingFunction) -> Result<CandidateScore, RankError> {
    Ok(rank(scores, rf)?.swap_remove(0).score)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    prompt_id: &'a str,
    generation_index: usize,
    rank: usize,
    rf: String,
    value: f64,
    text: &'a str,
    target: Personality,
    predicted: Personality,
    slot_errors: u32,
    slot_count: u32,
    sacc: f64,
    pac_prob: f64,
    fluency: f64,
    pbleu: Option<f64>,
    pbbleu: Option<f64>,
    pbleurt: Option<f64>,
    pbert: Option<f64>,
}

/// CSV with one row per candidate: text, every term, ranking value, rank.
pub fn write_ranked_csv<W: Write>(
    out: W,
    ranked: &[RankedCandidate],
    rf: &RankingFunction,
) -> Result<(), RankError> {
    let mut w = csv::Writer::from_writer(out);
    for r in ranked {
        let s = &r.score;
        w.serialize(CsvRow {
            prompt_id: &s.prompt_id,
            generation_index: s.generation_index,
            rank: r.rank,
            rf: rf.to_string(),
            value: r.value,
            text: &s.text,
            target: s.target,
            predicted: s.predicted,
            slot_errors: s.slot_errors,
            slot_count: s.slot_count,
            sacc: s.sacc,
            pac_prob: s.pac_prob,
            fluency: s.fluency,
            pbleu: s.pbleu,
            pbbleu: s.pbbleu,
            pbleurt: s.pbleurt,
            pbert: s.pbert,
        })
        .map_err(|e| RankError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| RankError::Io(e.to_string()))
}
