use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::metrics::MetricError;
use crate::mr::{normalize_key, Domain};
use crate::text::match_tokens;

const RESTAURANT_LEXICON: &str = include_str!("../../data/lexicons/restaurant.tsv");
const VIDEOGAME_LEXICON: &str = include_str!("../../data/lexicons/videogame.tsv");

/// Normalized form of a slot value used as a lexicon key.
pub fn normalize_value(value: &str) -> String {
    value
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub slot: String,
    /// Normalized value (see [`normalize_value`]).
    pub value: String,
    /// Surface text of the value as written in the lexicon file.
    pub surface: String,
    /// Tokenized synonym phrases.
    pub phrases: Vec<Vec<String>>,
}

/// Per-domain table mapping `slot=value` to surface synonym phrases.
///
/// File format, one entry per line:
///
/// ```text
/// slot<TAB>value<TAB>phrase1;phrase2;...
/// ```
///
/// A value of `*` declares an open slot (names, developers, years) whose
/// literal MR value is its only phrase.
#[derive(Debug, Clone)]
pub struct ValueLexicon {
    domain: Domain,
    entries: Vec<LexiconEntry>,
    open_slots: BTreeSet<String>,
}

impl ValueLexicon {
    pub fn parse(domain: Domain, text: &str) -> Result<Self, MetricError> {
        let mut entries: Vec<LexiconEntry> = Vec::new();
        let mut open_slots = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(slot), Some(value)) = (fields.next(), fields.next()) else {
                return Err(MetricError::Lexicon {
                    line: i + 1,
                    reason: "expected slot<TAB>value<TAB>phrases".into(),
                });
            };
            let slot = normalize_key(slot);
            let value = value.trim();
            if slot.is_empty() || value.is_empty() {
                return Err(MetricError::Lexicon {
                    line: i + 1,
                    reason: "empty slot or value".into(),
                });
            }
            if value == "*" {
                open_slots.insert(slot);
                continue;
            }
            let phrases: Vec<Vec<String>> = fields
                .next()
                .unwrap_or("")
                .split(';')
                .map(match_tokens)
                .filter(|p| !p.is_empty())
                .collect();
            let key = normalize_value(value);
            match entries.iter_mut().find(|e| e.slot == slot && e.value == key) {
                Some(existing) => existing.phrases.extend(phrases),
                None => entries.push(LexiconEntry {
                    slot,
                    value: key,
                    surface: value.to_string(),
                    phrases,
                }),
            }
        }
        Ok(ValueLexicon {
            domain,
            entries,
            open_slots,
        })
    }

    pub fn load(domain: Domain, path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| MetricError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(domain, &text)
    }

    pub fn builtin(domain: Domain) -> Self {
        let text = match domain {
            Domain::Restaurant => RESTAURANT_LEXICON,
            Domain::VideoGame => VIDEOGAME_LEXICON,
        };
        Self::parse(domain, text).expect("builtin lexicon is well formed")
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn covers_slot(&self, slot: &str) -> bool {
        self.open_slots.contains(slot) || self.entries.iter().any(|e| e.slot == slot)
    }

    pub fn is_open_slot(&self, slot: &str) -> bool {
        self.open_slots.contains(slot)
    }

    /// All slot names the lexicon knows about.
    pub fn slots(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .map(|e| e.slot.as_str())
            .chain(self.open_slots.iter().map(String::as_str))
            .collect()
    }

    pub fn entry(&self, slot: &str, value: &str) -> Option<&LexiconEntry> {
        let key = normalize_value(value);
        self.entries.iter().find(|e| e.slot == slot && e.value == key)
    }

    /// Values of a slot other than `value`, in file order.
    pub fn alternatives(&self, slot: &str, value: &str) -> Vec<&LexiconEntry> {
        let key = normalize_value(value);
        self.entries
            .iter()
            .filter(|e| e.slot == slot && e.value != key)
            .collect()
    }

    pub(crate) fn phrase_index(&self) -> HashMap<Vec<String>, Vec<(String, String)>> {
        let mut index: HashMap<Vec<String>, Vec<(String, String)>> = HashMap::new();
        for e in &self.entries {
            for p in &e.phrases {
                let targets = index.entry(p.clone()).or_default();
                let t = (e.slot.clone(), e.value.clone());
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
        }
        index
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lexicons_load() {
        let r = ValueLexicon::builtin(Domain::Restaurant);
        for slot in [
            "name", "near", "eattype", "food", "pricerange", "customerrating", "area",
            "familyfriendly",
        ] {
            assert!(r.covers_slot(slot), "{slot}");
        }
        let high = r.entry("pricerange", "High").unwrap();
        assert!(high.phrases.contains(&vec!["expensive".to_string()]));
        let v = ValueLexicon::builtin(Domain::VideoGame);
        assert!(v.is_open_slot("name"));
        assert!(v.entry("genres", "real-time strategy").is_some());
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(
            ValueLexicon::parse(Domain::Restaurant, "food"),
            Err(MetricError::Lexicon { line: 1, .. })
        ));
    }

    #[test]
    fn repeated_entries_merge() {
        let lex = ValueLexicon::parse(Domain::Restaurant, "food\tThai\tthai\nfood\tthai\tsiamese\n")
            .unwrap();
        assert_eq!(lex.entries().len(), 1);
        assert_eq!(lex.entries()[0].phrases.len(), 2);
    }
}
