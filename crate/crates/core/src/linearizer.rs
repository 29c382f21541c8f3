//! Pseudo-references: telegraphic textualizations of an MR.
//!
//! Slot values are concatenated in slot order. Boolean slots are rendered by
//! a phrase naming the slot ("family friendly") no matter whether the value
//! is yes or no. The target personality is never part of the output.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mr::{Domain, MeaningRepresentation, SlotKind};

const RESTAURANT_PHRASES: &str = include_str!("../data/phrases/restaurant.tsv");
const VIDEOGAME_PHRASES: &str = include_str!("../data/phrases/videogame.tsv");

#[derive(Debug, Error)]
pub enum PhraseTableError {
    #[error("line {line}: expected `slot<TAB>phrase`")]
    Malformed { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Slot name → surface phrase, used for boolean slots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseTable {
    phrases: HashMap<String, String>,
}

impl PhraseTable {
    pub fn parse(text: &str) -> Result<Self, PhraseTableError> {
        let mut phrases = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (slot, phrase) = line
                .split_once('\t')
                .ok_or(PhraseTableError::Malformed { line: i + 1 })?;
            let (slot, phrase) = (crate::mr::normalize_key(slot), phrase.trim());
            if slot.is_empty() || phrase.is_empty() {
                return Err(PhraseTableError::Malformed { line: i + 1 });
            }
            phrases.insert(slot, phrase.to_string());
        }
        Ok(PhraseTable { phrases })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhraseTableError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn builtin(domain: Domain) -> Self {
        let text = match domain {
            Domain::Restaurant => RESTAURANT_PHRASES,
            Domain::VideoGame => VIDEOGAME_PHRASES,
        };
        Self::parse(text).expect("builtin phrase table is well formed")
    }

    /// Phrase for a slot; unlisted slots fall back to the slot name with
    /// underscores as spaces and a leading `has` dropped.
    pub fn phrase(&self, slot: &str) -> String {
        match self.phrases.get(slot) {
            Some(p) => p.clone(),
            None => {
                let spaced = slot.replace('_', " ");
                spaced
                    .strip_prefix("has ")
                    .map(str::to_string)
                    .unwrap_or(spaced)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizerConfig {
    /// Prefix ViGGO pseudo-references with the dialogue act name.
    pub include_dialogue_act: bool,
    /// Render `no` booleans as "not <phrase>". Off by default, which keeps
    /// boolean slots value-opaque.
    pub negate_false_booleans: bool,
}

#[derive(Debug, Clone)]
pub struct Linearizer {
    restaurant: PhraseTable,
    videogame: PhraseTable,
    config: LinearizerConfig,
}

impl Default for Linearizer {
    fn default() -> Self {
        Linearizer::new(
            PhraseTable::builtin(Domain::Restaurant),
            PhraseTable::builtin(Domain::VideoGame),
            LinearizerConfig::default(),
        )
    }
}

impl Linearizer {
    pub fn new(restaurant: PhraseTable, videogame: PhraseTable, config: LinearizerConfig) -> Self {
        Linearizer {
            restaurant,
            videogame,
            config,
        }
    }

    pub fn with_config(mut self, config: LinearizerConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> LinearizerConfig {
        self.config
    }

    fn table(&self, domain: Domain) -> &PhraseTable {
        match domain {
            Domain::Restaurant => &self.restaurant,
            Domain::VideoGame => &self.videogame,
        }
    }

    pub fn linearize(&self, mr: &MeaningRepresentation) -> String {
        let table = self.table(mr.domain());
        let mut parts: Vec<String> = Vec::with_capacity(mr.slot_count() + 1);
        if self.config.include_dialogue_act {
            if let Some(act) = mr.dialogue_act() {
                parts.push(act.replace('_', " "));
            }
        }
        for slot in mr.slots() {
            let part = match slot.kind() {
                SlotKind::Boolean => {
                    let phrase = table.phrase(slot.name());
                    if self.config.negate_false_booleans && slot.as_bool() == Some(false) {
                        format!("not {phrase}")
                    } else {
                        phrase
                    }
                }
                _ => slot.value().to_string(),
            };
            parts.push(part);
        }
        parts.join(" ")
    }
}

/// Linearizes with the builtin phrase tables and default settings.
pub fn linearize(mr: &MeaningRepresentation) -> String {
    Linearizer::default().linearize(mr)
}
