//! Meaning representations for the restaurant (Personage/E2E) and video game
//! (ViGGO) domains.
//!
//! Restaurant MRs are `key = value` pairs joined by `|`:
//!
//! ```text
//! name = nameVariable | eattype = pub | food = English | familyfriendly = no
//! ```
//!
//! ViGGO MRs carry a dialogue act and bracketed slot values:
//!
//! ```text
//! verify_attribute(name [Little Big Adventure], rating [average], has_multiplayer [no])
//! ```
//!
//! Either form may carry a trailing `| personality = <label>` pair, which is
//! lifted into [`MeaningRepresentation::target_personality`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MrError {
    #[error("empty meaning representation")]
    Empty,
    #[error("segment `{0}` is not a `key = value` pair")]
    MissingEquals(String),
    #[error("slot `{0}` appears more than once")]
    DuplicateSlot(String),
    #[error("slot `{0}` has an empty value")]
    EmptyValue(String),
    #[error("unknown personality label `{0}`")]
    UnknownPersonality(String),
    #[error("meaning representation has no slots")]
    NoSlots,
    #[error("unbalanced brackets or parentheses at byte {0}")]
    Unbalanced(usize),
    #[error("missing dialogue act")]
    MissingAct,
    #[error("invalid dialogue act `{0}`")]
    InvalidAct(String),
    #[error("boolean slot `{slot}` has value `{value}`, expected yes or no")]
    InvalidBoolean { slot: String, value: String },
    #[error("malformed slot near byte {0}")]
    MalformedSlot(usize),
    #[error("cannot serialize a {domain} MR in {format} format")]
    FormatMismatch { domain: Domain, format: MrFormat },
}

/// The five Big-5 personality targets. Variant order is alphabetical, which
/// is also the class order used on the wire by remote classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Personality {
    Agreeable,
    Conscientious,
    Disagreeable,
    Extravert,
    Unconscientious,
}

impl Personality {
    pub const ALL: [Personality; 5] = [
        Personality::Agreeable,
        Personality::Conscientious,
        Personality::Disagreeable,
        Personality::Extravert,
        Personality::Unconscientious,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Personality::Agreeable => "agreeable",
            Personality::Conscientious => "conscientious",
            Personality::Disagreeable => "disagreeable",
            Personality::Extravert => "extravert",
            Personality::Unconscientious => "unconscientious",
        }
    }
}

impl fmt::Display for Personality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Personality {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim();
        Personality::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(label))
            .ok_or_else(|| MrError::UnknownPersonality(label.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Restaurant,
    VideoGame,
}

impl Domain {
    pub fn native_format(self) -> MrFormat {
        match self {
            Domain::Restaurant => MrFormat::Personage,
            Domain::VideoGame => MrFormat::Viggo,
        }
    }

    /// Slot kind for a (normalized) slot name in this domain.
    pub fn slot_kind(self, name: &str) -> SlotKind {
        match (self, name) {
            (Domain::Restaurant, "name" | "near") => SlotKind::Placeholder,
            (Domain::Restaurant, "familyfriendly") => SlotKind::Boolean,
            (
                Domain::VideoGame,
                "has_multiplayer" | "has_linux_release" | "has_mac_release" | "available_on_steam",
            ) => SlotKind::Boolean,
            (
                Domain::VideoGame,
                "name" | "developer" | "release_year" | "exp_release_date" | "specifier",
            ) => SlotKind::OpenText,
            _ => SlotKind::Categorical,
        }
    }

    /// Whether a slot's bracketed value is a comma-separated list of items.
    pub fn is_multi_valued(self, name: &str) -> bool {
        matches!(
            (self, name),
            (Domain::VideoGame, "genres" | "platforms" | "player_perspective")
        )
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Restaurant => "restaurant",
            Domain::VideoGame => "videogame",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "restaurant" | "personage" | "e2e" => Ok(Domain::Restaurant),
            "videogame" | "video_game" | "viggo" => Ok(Domain::VideoGame),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MrFormat {
    Personage,
    Viggo,
}

impl fmt::Display for MrFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MrFormat::Personage => "personage",
            MrFormat::Viggo => "viggo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotKind {
    Categorical,
    Boolean,
    Placeholder,
    OpenText,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotValue {
    name: String,
    value: String,
    kind: SlotKind,
}

impl SlotValue {
    /// Builds a slot, normalizing the key and checking boolean values.
    pub fn new(domain: Domain, name: &str, value: &str) -> Result<Self, MrError> {
        let name = normalize_key(name);
        let value = value.trim();
        if value.is_empty() {
            return Err(MrError::EmptyValue(name));
        }
        let kind = domain.slot_kind(&name);
        let value = if kind == SlotKind::Boolean {
            let lowered = value.to_ascii_lowercase();
            if lowered != "yes" && lowered != "no" {
                return Err(MrError::InvalidBoolean {
                    slot: name,
                    value: value.to_string(),
                });
            }
            lowered
        } else {
            value.to_string()
        };
        Ok(SlotValue { name, value, kind })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn kind(&self) -> SlotKind {
        self.kind
    }

    pub fn as_bool(&self) -> Option<bool> {
        match (self.kind, self.value.as_str()) {
            (SlotKind::Boolean, "yes") => Some(true),
            (SlotKind::Boolean, "no") => Some(false),
            _ => None,
        }
    }

    /// The comma-separated items of a list-valued slot, or the whole value.
    pub fn items(&self, domain: Domain) -> Vec<&str> {
        if domain.is_multi_valued(&self.name) {
            self.value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect()
        } else {
            vec![self.value.as_str()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeaningRepresentation {
    domain: Domain,
    dialogue_act: Option<String>,
    slots: Vec<SlotValue>,
    target_personality: Option<Personality>,
}

impl MeaningRepresentation {
    pub fn new(
        domain: Domain,
        dialogue_act: Option<String>,
        slots: Vec<SlotValue>,
        target_personality: Option<Personality>,
    ) -> Result<Self, MrError> {
        if slots.is_empty() {
            return Err(MrError::NoSlots);
        }
        for (i, slot) in slots.iter().enumerate() {
            if slots[..i].iter().any(|s| s.name == slot.name) {
                return Err(MrError::DuplicateSlot(slot.name.clone()));
            }
        }
        if let Some(act) = &dialogue_act {
            if !is_identifier(act) {
                return Err(MrError::InvalidAct(act.clone()));
            }
        }
        Ok(MeaningRepresentation {
            domain,
            dialogue_act,
            slots,
            target_personality,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dialogue_act(&self) -> Option<&str> {
        self.dialogue_act.as_deref()
    }

    pub fn slots(&self) -> &[SlotValue] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotValue> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn target_personality(&self) -> Option<Personality> {
        self.target_personality
    }

    pub fn with_personality(mut self, personality: Option<Personality>) -> Self {
        self.target_personality = personality;
        self
    }

    /// Serializes in the domain's native format.
    pub fn to_canonical_string(&self) -> String {
        serialize_mr(self, self.domain.native_format()).expect("native format always matches")
    }
}

impl fmt::Display for MeaningRepresentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

impl FromStr for MeaningRepresentation {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_mr(s)
    }
}

/// Lower-cases a key and drops all whitespace ("familyFriendly" and
/// "family Friendly" both become "familyfriendly").
pub fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses either MR format, choosing ViGGO when the text opens with `act(`.
pub fn parse_mr(text: &str) -> Result<MeaningRepresentation, MrError> {
    if looks_like_viggo(text) {
        parse_viggo_mr(text)
    } else {
        parse_personage_mr(text)
    }
}

fn looks_like_viggo(text: &str) -> bool {
    match text.find('(') {
        Some(open) => {
            let head = text[..open].trim();
            !head.is_empty() && is_identifier(head) && !text[..open].contains('=')
        }
        None => false,
    }
}

pub fn parse_personage_mr(text: &str) -> Result<MeaningRepresentation, MrError> {
    if text.trim().is_empty() {
        return Err(MrError::Empty);
    }
    let mut slots: Vec<SlotValue> = Vec::new();
    let mut personality = None;
    for segment in text.split('|') {
        let (key, value) = segment
            .split_once('=')
            .ok_or_else(|| MrError::MissingEquals(segment.trim().to_string()))?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(MrError::MissingEquals(segment.trim().to_string()));
        }
        if key == "personality" {
            if personality.is_some() {
                return Err(MrError::DuplicateSlot(key));
            }
            if value.trim().is_empty() {
                return Err(MrError::EmptyValue(key));
            }
            personality = Some(value.parse()?);
            continue;
        }
        if slots.iter().any(|s| s.name == key) {
            return Err(MrError::DuplicateSlot(key));
        }
        slots.push(SlotValue::new(Domain::Restaurant, &key, value)?);
    }
    MeaningRepresentation::new(Domain::Restaurant, None, slots, personality)
}

pub fn parse_viggo_mr(text: &str) -> Result<MeaningRepresentation, MrError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(MrError::Empty);
    }
    let open = text.find('(').ok_or(MrError::MissingAct)?;
    let act = text[..open].trim();
    if act.is_empty() {
        return Err(MrError::MissingAct);
    }
    if !is_identifier(act) {
        return Err(MrError::InvalidAct(act.to_string()));
    }

    let mut slots: Vec<SlotValue> = Vec::new();
    let bytes = text.as_bytes();
    let mut pos = open + 1;
    let close;
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(MrError::Unbalanced(pos));
        }
        if bytes[pos] == b')' {
            close = pos;
            break;
        }
        // slot name up to '['
        let name_start = pos;
        while pos < bytes.len() && !matches!(bytes[pos], b'[' | b']' | b',' | b'(' | b')') {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(MrError::Unbalanced(pos));
        }
        if bytes[pos] != b'[' {
            return Err(if bytes[pos] == b']' {
                MrError::Unbalanced(pos)
            } else {
                MrError::MalformedSlot(pos)
            });
        }
        let name = text[name_start..pos].trim();
        if name.is_empty() {
            return Err(MrError::MalformedSlot(name_start));
        }
        let value_start = pos + 1;
        let value_end = text[value_start..]
            .find([']', '['])
            .map(|i| value_start + i)
            .ok_or(MrError::Unbalanced(pos))?;
        if bytes[value_end] == b'[' {
            return Err(MrError::Unbalanced(value_end));
        }
        let key = normalize_key(name);
        if slots.iter().any(|s| s.name == key) {
            return Err(MrError::DuplicateSlot(key));
        }
        slots.push(SlotValue::new(
            Domain::VideoGame,
            &key,
            &text[value_start..value_end],
        )?);
        pos = value_end + 1;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        match bytes.get(pos) {
            Some(b',') => pos += 1,
            Some(b')') => {
                close = pos;
                break;
            }
            None => return Err(MrError::Unbalanced(pos)),
            Some(_) => return Err(MrError::MalformedSlot(pos)),
        }
    }

    let rest = text[close + 1..].trim();
    let personality = if rest.is_empty() {
        None
    } else {
        let pair = rest
            .strip_prefix('|')
            .ok_or(MrError::MalformedSlot(close + 1))?;
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| MrError::MissingEquals(pair.trim().to_string()))?;
        if normalize_key(key) != "personality" || pair.contains('|') {
            return Err(MrError::MalformedSlot(close + 1));
        }
        Some(value.parse()?)
    };

    if slots.is_empty() {
        return Err(MrError::NoSlots);
    }
    MeaningRepresentation::new(
        Domain::VideoGame,
        Some(act.to_string()),
        slots,
        personality,
    )
}

/// Serializes an MR. The target personality, when present, is appended as a
/// trailing `| personality = <label>` pair in both formats.
pub fn serialize_mr(mr: &MeaningRepresentation, format: MrFormat) -> Result<String, MrError> {
    if mr.domain.native_format() != format {
        return Err(MrError::FormatMismatch {
            domain: mr.domain,
            format,
        });
    }
    if mr.slots.is_empty() {
        return Err(MrError::NoSlots);
    }
    let mut out = match format {
        MrFormat::Personage => mr
            .slots
            .iter()
            .map(|s| format!("{} = {}", s.name, s.value))
            .collect::<Vec<_>>()
            .join(" | "),
        MrFormat::Viggo => {
            let act = mr.dialogue_act.as_deref().ok_or(MrError::MissingAct)?;
            let body = mr
                .slots
                .iter()
                .map(|s| format!("{} [{}]", s.name, s.value))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{act}({body})")
        }
    };
    if let Some(p) = mr.target_personality {
        out.push_str(" | personality = ");
        out.push_str(p.as_str());
    }
    Ok(out)
}
