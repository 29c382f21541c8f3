//! Slot aligner and slot error rate.
//!
//! The candidate is lower-cased, stripped of punctuation and scanned left to
//! right. At each position the longest lexicon phrase starting there is taken
//! as a mention and the scan resumes after it. Each mention is then resolved
//! against the MR:
//!
//! * a phrase of an MR slot with the MR's value is a correct mention;
//! * a phrase of an MR slot with another value is a wrong mention;
//! * a phrase of a known slot absent from the MR is a hallucination.
//!
//! Per MR slot with `k` expected items (`k = 1` unless list-valued) and `m`
//! mentions: any wrong mention counts one substitution; otherwise a slot with
//! an unmentioned item counts one deletion; mentions beyond `k` count as
//! repeats. Every hallucinated mention counts once.

use std::collections::{HashMap, HashSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::metrics::lexicon::{normalize_value, ValueLexicon};
use crate::metrics::MetricError;
use crate::mr::{MeaningRepresentation, SlotKind};
use crate::text::match_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionVerdict {
    Correct,
    Wrong,
    Hallucinated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMention {
    /// Token span `[start, end)` in the match-token stream of the candidate.
    pub start: usize,
    pub end: usize,
    pub slot: String,
    pub value: String,
    pub verdict: MentionVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAlignment {
    pub mentions: Vec<SlotMention>,
    pub substitutions: u32,
    pub deletions: u32,
    pub repeats: u32,
    pub hallucinations: u32,
    pub slot_count: u32,
}

impl SlotAlignment {
    pub fn from_counts(s: u32, d: u32, r: u32, h: u32, n: u32) -> Self {
        SlotAlignment {
            mentions: Vec::new(),
            substitutions: s,
            deletions: d,
            repeats: r,
            hallucinations: h,
            slot_count: n,
        }
    }

    pub fn errors(&self) -> u32 {
        self.substitutions + self.deletions + self.repeats + self.hallucinations
    }

    pub fn ser(&self) -> Result<Ratio<i64>, MetricError> {
        ser(self)
    }

    pub fn sacc(&self) -> Result<Ratio<i64>, MetricError> {
        sacc(self)
    }
}

/// `(S + D + R + H) / N` as an exact rational; may exceed 1.
pub fn ser(alignment: &SlotAlignment) -> Result<Ratio<i64>, MetricError> {
    if alignment.slot_count == 0 {
        return Err(MetricError::NoSlots);
    }
    Ok(Ratio::new(
        i64::from(alignment.errors()),
        i64::from(alignment.slot_count),
    ))
}

/// `1 − SER`, unclamped.
pub fn sacc(alignment: &SlotAlignment) -> Result<Ratio<i64>, MetricError> {
    Ok(Ratio::from_integer(1) - ser(alignment)?)
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn align_slots(
    candidate: &str,
    mr: &MeaningRepresentation,
    lexicon: &ValueLexicon,
) -> Result<SlotAlignment, MetricError> {
    for slot in mr.slots() {
        if !lexicon.covers_slot(slot.name()) {
            return Err(MetricError::MissingLexiconSlot(slot.name().to_string()));
        }
    }
    let domain = mr.domain();

    // expected items per MR slot
    let expected: HashMap<&str, Vec<String>> = mr
        .slots()
        .iter()
        .map(|s| {
            let items = s.items(domain).into_iter().map(normalize_value).collect();
            (s.name(), items)
        })
        .collect();

    let mut index = lexicon.phrase_index();
    // literal values of MR slots act as phrases too
    for slot in mr.slots() {
        if slot.kind() == SlotKind::Boolean {
            continue;
        }
        for item in slot.items(domain) {
            let tokens = match_tokens(item);
            if tokens.is_empty() {
                continue;
            }
            let target = (slot.name().to_string(), normalize_value(item));
            let targets = index.entry(tokens).or_default();
            if !targets.contains(&target) {
                targets.push(target);
            }
        }
    }
    let max_len = index.keys().map(Vec::len).max().unwrap_or(0);

    let tokens = match_tokens(candidate);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=max_len.min(tokens.len() - i))
            .rev()
            .find_map(|len| index.get(&tokens[i..i + len]).map(|t| (len, t)));
        let Some((len, targets)) = longest else {
            i += 1;
            continue;
        };
        let is_correct = |(slot, value): &&(String, String)| {
            expected
                .get(slot.as_str())
                .is_some_and(|items| items.contains(value))
        };
        // prefer a slot that has not been realized yet when the phrase is shared
        let correct = targets
            .iter()
            .filter(is_correct)
            .find(|(slot, value)| {
                !mentions.iter().any(|m: &SlotMention| {
                    m.verdict == MentionVerdict::Correct && &m.slot == slot && &m.value == value
                })
            })
            .or_else(|| targets.iter().find(is_correct));
        let wrong = targets
            .iter()
            .find(|(slot, _)| expected.contains_key(slot.as_str()));
        let (target, verdict) = match (correct, wrong) {
            (Some(t), _) => (t, MentionVerdict::Correct),
            (None, Some(t)) => (t, MentionVerdict::Wrong),
            (None, None) => (&targets[0], MentionVerdict::Hallucinated),
        };
        mentions.push(SlotMention {
            start: i,
            end: i + len,
            slot: target.0.clone(),
            value: target.1.clone(),
            verdict,
        });
        i += len;
    }

    let mut substitutions = 0;
    let mut deletions = 0;
    let mut repeats = 0;
    for slot in mr.slots() {
        let items = &expected[slot.name()];
        let of_slot: Vec<&SlotMention> = mentions
            .iter()
            .filter(|m| m.slot == slot.name() && m.verdict != MentionVerdict::Hallucinated)
            .collect();
        let realized: HashSet<&str> = of_slot
            .iter()
            .filter(|m| m.verdict == MentionVerdict::Correct)
            .map(|m| m.value.as_str())
            .collect();
        let wrong = of_slot
            .iter()
            .any(|m| m.verdict == MentionVerdict::Wrong);
        if wrong {
            substitutions += 1;
        } else if items.iter().any(|item| !realized.contains(item.as_str())) {
            deletions += 1;
        }
        repeats += of_slot.len().saturating_sub(items.len()) as u32;
    }
    let hallucinations = mentions
        .iter()
        .filter(|m| m.verdict == MentionVerdict::Hallucinated)
        .count() as u32;

    Ok(SlotAlignment {
        mentions,
        substitutions,
        deletions,
        repeats,
        hallucinations,
        slot_count: mr.slot_count() as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearizer::linearize;
    use crate::mr::{parse_mr, Domain};

    const FIG2: &str = "name = nameVariable | eatType = pub | food = English | priceRange = high | area = city centre | familyFriendly = no | near = nearVariable";

    fn counts(a: &SlotAlignment) -> (u32, u32, u32, u32) {
        (a.substitutions, a.deletions, a.repeats, a.hallucinations)
    }

    fn align(candidate: &str, mr: &str) -> SlotAlignment {
        let mr = parse_mr(mr).unwrap();
        let lex = ValueLexicon::builtin(mr.domain());
        align_slots(candidate, &mr, &lex).unwrap()
    }

    #[test]
    fn truncated_e2e_reference() {
        let a = align(
            "nameVariable is a pub. It is an English place and it is in city centre. It isn't family friendly.",
            FIG2,
        );
        assert_eq!(counts(&a), (0, 2, 0, 0));
        assert_eq!(a.ser().unwrap(), Ratio::new(2, 7));
        assert_eq!(a.sacc().unwrap(), Ratio::new(5, 7));
    }

    #[test]
    fn pseudo_reference_is_perfect_modulo_booleans() {
        let mr = parse_mr("name = nameVariable | eattype = pub | food = English | near = nearVariable").unwrap();
        let lex = ValueLexicon::builtin(Domain::Restaurant);
        let a = align_slots(&linearize(&mr), &mr, &lex).unwrap();
        assert_eq!(counts(&a), (0, 0, 0, 0));
    }

    #[test]
    fn substitution() {
        let a = align("nameVariable is an Italian pub.", "name = nameVariable | eattype = pub | food = English");
        assert_eq!(counts(&a), (1, 0, 0, 0));
    }

    #[test]
    fn boolean_polarity_is_checked() {
        let mr = "name = nameVariable | familyfriendly = no";
        assert_eq!(counts(&align("nameVariable is kid friendly.", mr)), (1, 0, 0, 0));
        assert_eq!(counts(&align("nameVariable isn't kid friendly.", mr)), (0, 0, 0, 0));
    }

    #[test]
    fn repeats_and_hallucinations() {
        let a = align(
            "nameVariable is a pub, a real pub, with a mediocre rating near the river.",
            "name = nameVariable | eattype = pub",
        );
        assert_eq!(counts(&a), (0, 0, 1, 2));
    }

    #[test]
    fn longest_phrase_wins() {
        let a = align(
            "It has a high customer rating.",
            "name = nameVariable | pricerange = high",
        );
        // "high customer rating" is a rating mention, not a price one
        assert_eq!(counts(&a), (0, 2, 0, 1));
    }

    #[test]
    fn viggo_list_slot() {
        let mr = "give_opinion(name [SpellForce 3], rating [poor], genres [real-time strategy, role-playing], player_perspective [bird view])";
        let a = align(
            "I think that SpellForce 3 is one of the worst games I've ever played. Trying to combine the real-time strategy and role-playing genres just doesn't work, and the bird's eye view makes it near impossible to play.",
            mr,
        );
        assert_eq!(counts(&a), (0, 0, 0, 0));
        let partial = align("SpellForce 3 is a poor real-time strategy game from a bird view.", mr);
        assert_eq!(counts(&partial), (0, 1, 0, 0));
    }

    #[test]
    fn missing_lexicon_slot() {
        let mr = parse_mr("name = x | wifi = yes").unwrap();
        let lex = ValueLexicon::builtin(Domain::Restaurant);
        assert_eq!(
            align_slots("x", &mr, &lex),
            Err(MetricError::MissingLexiconSlot("wifi".into()))
        );
    }

    #[test]
    fn ser_arithmetic() {
        let a = SlotAlignment::from_counts(1, 1, 1, 1, 4);
        assert_eq!(ser(&a).unwrap(), Ratio::from_integer(1));
        let b = SlotAlignment::from_counts(0, 0, 0, 0, 3);
        assert_eq!(ser(&b).unwrap(), Ratio::from_integer(0));
        assert_eq!(sacc(&b).unwrap(), Ratio::from_integer(1));
        let c = SlotAlignment::from_counts(0, 1, 1, 3, 4);
        assert_eq!(sacc(&c).unwrap(), Ratio::new(-1, 4));
        assert_eq!(
            ser(&SlotAlignment::from_counts(0, 0, 0, 0, 0)),
            Err(MetricError::NoSlots)
        );
    }
}
