//! Few-shot prompt construction and demonstration selection.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::extract_completion;
use crate::linearizer::Linearizer;
use crate::metrics::{MetricError, SimilarityScorer};
use crate::mr::{serialize_mr, MeaningRepresentation, MrError, Personality};

/// Largest number of demonstrations a prompt may hold.
pub const MAX_EXAMPLES: usize = 36;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("{0} has no personality")]
    MissingPersonality(&'static str),
    #[error("pool has {available} eligible demonstrations, need {needed}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Mr(#[from] MrError),
    #[error("similarity scorer failed: {0}")]
    Similarity(#[from] MetricError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub mr: MeaningRepresentation,
    pub reference: String,
    pub personality: Option<Personality>,
    pub pseudo_reference: String,
}

impl Demonstration {
    pub fn new(mr: MeaningRepresentation, reference: impl Into<String>, personality: Option<Personality>) -> Self {
        Self::with_linearizer(mr, reference, personality, &Linearizer::default())
    }

    pub fn with_linearizer(
        mr: MeaningRepresentation,
        reference: impl Into<String>,
        personality: Option<Personality>,
        linearizer: &Linearizer,
    ) -> Self {
        let pseudo_reference = linearizer.linearize(&mr);
        Demonstration {
            mr,
            reference: reference.into(),
            personality,
            pseudo_reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFormat {
    D2t,
    Tst,
}

impl PromptFormat {
    /// Where a completion for this format ends.
    pub fn stop_sequences(self) -> Vec<String> {
        match self {
            PromptFormat::D2t => vec!["\n\n".to_string()],
            PromptFormat::Tst => vec!["}".to_string()],
        }
    }
}

impl fmt::Display for PromptFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptFormat::D2t => "d2t",
            PromptFormat::Tst => "tst",
        })
    }
}

impl FromStr for PromptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d2t" => Ok(PromptFormat::D2t),
            "tst" => Ok(PromptFormat::Tst),
            other => Err(format!("unknown prompt format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "personality")]
pub enum PersonalityMode {
    Specific(Personality),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "strategy", content = "seed")]
pub enum Sampling {
    Random(u64),
    Diverse(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub format: PromptFormat,
    pub k: usize,
    pub personality_mode: PersonalityMode,
    pub sampling: Sampling,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.k == 0 || self.k > MAX_EXAMPLES {
            return Err(PromptError::InvalidSpec(format!(
                "k must lie in 1..={MAX_EXAMPLES}, got {}",
                self.k
            )));
        }
        if self.personality_mode == PersonalityMode::All && !self.k.is_multiple_of(5) {
            return Err(PromptError::InvalidSpec(format!(
                "k = {} cannot be split evenly over five personalities",
                self.k
            )));
        }
        Ok(())
    }
}

fn mr_line(mr: &MeaningRepresentation, personality: Personality) -> Result<String, MrError> {
    let mr = mr.clone().with_personality(Some(personality));
    serialize_mr(&mr, mr.domain().native_format())
}

fn target_personality(target: &MeaningRepresentation) -> Result<Personality, PromptError> {
    target
        .target_personality()
        .ok_or(PromptError::MissingPersonality("target MR"))
}

fn example_personality(ex: &Demonstration) -> Result<Personality, PromptError> {
    ex.personality
        .ok_or(PromptError::MissingPersonality("demonstration"))
}

/// MR lines tagged with a personality, each followed by its reference; the
/// prompt ends with the target line so the model writes the reference.
pub fn build_d2t_prompt(
    examples: &[Demonstration],
    target: &MeaningRepresentation,
) -> Result<String, PromptError> {
    let personality = target_personality(target)?;
    let mut out = String::new();
    for ex in examples {
        let p = example_personality(ex)?;
        out.push_str(&mr_line(&ex.mr, p)?);
        out.push('\n');
        out.push_str(ex.reference.trim());
        out.push_str("\n\n");
    }
    out.push_str(&mr_line(target, personality)?);
    out.push('\n');
    Ok(out)
}

fn tst_block(pseudo: &str, personality: Personality) -> String {
    format!("Here is some text: {{{pseudo}}}. Here is a rewrite of the text which is {personality} : {{")
}

/// Rewrite instructions over pseudo-references; the target block stops
/// after the opening brace. The target is linearized with the default
/// settings.
pub fn build_tst_prompt(
    examples: &[Demonstration],
    target: &MeaningRepresentation,
) -> Result<String, PromptError> {
    build_tst_prompt_with(examples, target, &Linearizer::default())
}

pub fn build_tst_prompt_with(
    examples: &[Demonstration],
    target: &MeaningRepresentation,
    linearizer: &Linearizer,
) -> Result<String, PromptError> {
    let personality = target_personality(target)?;
    let mut out = String::new();
    for ex in examples {
        let p = example_personality(ex)?;
        out.push_str(&tst_block(&ex.pseudo_reference, p));
        out.push_str(ex.reference.trim());
        out.push_str("}.\n\n");
    }
    out.push_str(&tst_block(&linearizer.linearize(target), personality));
    Ok(out)
}

pub fn build_prompt(
    format: PromptFormat,
    examples: &[Demonstration],
    target: &MeaningRepresentation,
    linearizer: &Linearizer,
) -> Result<String, PromptError> {
    match format {
        PromptFormat::D2t => build_d2t_prompt(examples, target),
        PromptFormat::Tst => build_tst_prompt_with(examples, target, linearizer),
    }
}

/// The model's answer: up to the first unescaped `}` for TST, the first
/// blank line for D2T.
pub fn extract_from_completion(format: PromptFormat, raw: &str) -> String {
    extract_completion(raw, &format.stop_sequences())
}

fn eligible(pool: &[Demonstration], personality: Personality) -> Vec<&Demonstration> {
    pool.iter().filter(|d| d.personality == Some(personality)).collect()
}

fn per_personality_groups<'a>(
    pool: &'a [Demonstration],
    spec: &PromptSpec,
) -> Result<Vec<(Vec<&'a Demonstration>, usize)>, PromptError> {
    spec.validate()?;
    let groups = match spec.personality_mode {
        PersonalityMode::Specific(p) => vec![(eligible(pool, p), spec.k)],
        PersonalityMode::All => Personality::ALL
            .iter()
            .map(|&p| (eligible(pool, p), spec.k / 5))
            .collect(),
    };
    for (group, need) in &groups {
        if group.len() < *need {
            return Err(PromptError::InsufficientPool {
                needed: *need,
                available: group.len(),
            });
        }
    }
    Ok(groups)
}

/// Uniform sample without replacement from the demonstrations matching the
/// spec's personality mode; `All` takes `k / 5` per personality.
pub fn select_random(pool: &[Demonstration], spec: &PromptSpec) -> Result<Vec<Demonstration>, PromptError> {
    let seed = match spec.sampling {
        Sampling::Random(s) | Sampling::Diverse(s) => s,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.k);
    for (group, need) in per_personality_groups(pool, spec)? {
        for i in sample(&mut rng, group.len(), need).into_iter() {
            out.push(group[i].clone());
        }
    }
    Ok(out)
}

/// Greedy diverse selection over references: a seeded uniform first pick,
/// then repeatedly the item with the lowest mean similarity to everything
/// chosen so far. Ties go to the earlier pool item.
pub fn select_diverse(
    pool: &[Demonstration],
    k: usize,
    similarity: &dyn SimilarityScorer,
    seed: u64,
) -> Result<Vec<Demonstration>, PromptError> {
    let refs: Vec<&str> = pool.iter().map(|d| d.reference.as_str()).collect();
    let picked = select_diverse_indices(&refs, k, similarity, seed)?;
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Index form of [`select_diverse`]; similarity is `sim(candidate, chosen)`.
pub fn select_diverse_indices(
    texts: &[&str],
    k: usize,
    similarity: &dyn SimilarityScorer,
    seed: u64,
) -> Result<Vec<usize>, PromptError> {
    if texts.len() < k {
        return Err(PromptError::InsufficientPool {
            needed: k,
            available: texts.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..texts.len());
    let mut chosen = vec![first];
    let mut sums = vec![0.0f64; texts.len()];
    while chosen.len() < k {
        let last = *chosen.last().expect("non-empty");
        let open: Vec<usize> = (0..texts.len()).filter(|i| !chosen.contains(i)).collect();
        let pairs: Vec<(String, String)> = open
            .iter()
            .map(|&i| (texts[i].to_string(), texts[last].to_string()))
            .collect();
        let scores = similarity.score_pairs(&pairs)?;
        for (&i, s) in open.iter().zip(scores) {
            sums[i] += s;
        }
        let n = chosen.len() as f64;
        let mut best: Option<(usize, f64)> = None;
        for &i in &open {
            let mean = sums[i] / n;
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((i, mean));
            }
        }
        chosen.push(best.expect("pool larger than selection").0);
    }
    Ok(chosen)
}

/// Selection according to the spec's sampling strategy.
pub fn select_examples(
    pool: &[Demonstration],
    spec: &PromptSpec,
    similarity: &dyn SimilarityScorer,
) -> Result<Vec<Demonstration>, PromptError> {
    match spec.sampling {
        Sampling::Random(_) => select_random(pool, spec),
        Sampling::Diverse(seed) => {
            let mut out = Vec::with_capacity(spec.k);
            for (g, (group, need)) in per_personality_groups(pool, spec)?.into_iter().enumerate() {
                let owned: Vec<Demonstration> = group.into_iter().cloned().collect();
                out.extend(select_diverse(&owned, need, similarity, seed.wrapping_add(g as u64))?);
            }
            Ok(out)
        }
    }
}

/// Writes one prompt to `<dir>/<id>.txt`, creating `dir` if needed.
pub fn write_prompt_dump(dir: impl AsRef<Path>, id: &str, prompt: &str) -> Result<PathBuf, PromptError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| PromptError::Io(format!("{}: {e}", dir.display())))?;
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let path = dir.join(format!("{safe}.txt"));
    fs::write(&path, prompt).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PBleuScorer;
    use crate::mr::parse_mr;

    fn demo(mr: &str, reference: &str, p: Personality) -> Demonstration {
        Demonstration::new(parse_mr(mr).unwrap(), reference, Some(p))
    }

    fn pool() -> Vec<Demonstration> {
        let mut pool = Vec::new();
        for (i, p) in Personality::ALL.iter().enumerate() {
            for j in 0..4 {
                pool.push(demo(
                    &format!("name = nameVariable | food = Italian | area = riverside | eattype = pub{i}{j}"),
                    &format!("text {i} {j} about a pub"),
                    *p,
                ));
            }
        }
        pool
    }

    fn squash(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn zero_shot_prompts() {
        let target = parse_mr("name = nameVariable | personality = agreeable").unwrap();
        assert_eq!(
            build_d2t_prompt(&[], &target).unwrap(),
            "name = nameVariable | personality = agreeable\n"
        );
        assert_eq!(
            build_tst_prompt(&[], &target).unwrap(),
            "Here is some text: {nameVariable}. Here is a rewrite of the text which is agreeable : {"
        );
    }

    #[test]
    fn missing_target_personality() {
        let target = parse_mr("name = nameVariable").unwrap();
        assert_eq!(
            build_d2t_prompt(&[], &target),
            Err(PromptError::MissingPersonality("target MR"))
        );
        assert!(build_tst_prompt(&[], &target).is_err());
    }

    #[test]
    fn d2t_block_structure() {
        let target = parse_mr("name = nameVariable | personality = extravert").unwrap();
        let examples = &pool()[..2];
        let prompt = build_d2t_prompt(examples, &target).unwrap();
        assert_eq!(prompt.split("\n\n").count(), 3);
        assert!(squash(&prompt).ends_with("name = nameVariable | personality = extravert"));
    }

    #[test]
    fn completion_extraction() {
        assert_eq!(
            extract_from_completion(PromptFormat::Tst, " nameVariable is near nearVariable.}. Here is"),
            "nameVariable is near nearVariable."
        );
        assert_eq!(
            extract_from_completion(PromptFormat::D2t, "It is a pub.\n\nname = x"),
            "It is a pub."
        );
    }

    #[test]
    fn spec_validation() {
        let spec = |k, mode| PromptSpec {
            format: PromptFormat::D2t,
            k,
            personality_mode: mode,
            sampling: Sampling::Random(0),
        };
        assert!(spec(36, PersonalityMode::Specific(Personality::Agreeable)).validate().is_ok());
        assert!(spec(37, PersonalityMode::Specific(Personality::Agreeable)).validate().is_err());
        assert!(spec(0, PersonalityMode::All).validate().is_err());
        assert!(spec(7, PersonalityMode::All).validate().is_err());
        assert!(spec(10, PersonalityMode::All).validate().is_ok());
    }

    #[test]
    fn random_selection() {
        let pool = pool();
        let spec = PromptSpec {
            format: PromptFormat::Tst,
            k: 5,
            personality_mode: PersonalityMode::All,
            sampling: Sampling::Random(3),
        };
        let picked = select_random(&pool, &spec).unwrap();
        for p in Personality::ALL {
            assert_eq!(picked.iter().filter(|d| d.personality == Some(p)).count(), 1);
        }
        assert_eq!(picked, select_random(&pool, &spec).unwrap());

        let specific = PromptSpec {
            k: 4,
            personality_mode: PersonalityMode::Specific(Personality::Conscientious),
            ..spec
        };
        let mut all = select_random(&pool, &specific).unwrap();
        all.sort_by(|a, b| a.reference.cmp(&b.reference));
        let mut expected = eligible(&pool, Personality::Conscientious);
        expected.sort_by(|a, b| a.reference.cmp(&b.reference));
        assert_eq!(all.iter().collect::<Vec<_>>(), expected);

        let too_many = PromptSpec { k: 5, ..specific };
        assert_eq!(
            select_random(&pool, &too_many),
            Err(PromptError::InsufficientPool { needed: 5, available: 4 })
        );
    }

    #[test]
    fn diverse_identical_pool_follows_pool_order() {
        let texts = ["same text here", "same text here", "same text here"];
        for seed in 0..10 {
            let picked = select_diverse_indices(&texts, 2, &PBleuScorer, seed).unwrap();
            let expected_second = if picked[0] == 0 { 1 } else { 0 };
            assert_eq!(picked[1], expected_second);
        }
    }

    #[test]
    fn diverse_prefers_dissimilar() {
        let texts = [
            "the pub is in the city centre near the river",
            "the pub is in the city centre near the river too",
            "oh god expensive italian food obviously",
        ];
        // find a seed whose first pick is item 0
        let seed = (0..100)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).random_range(0..3) == 0)
            .unwrap();
        assert_eq!(select_diverse_indices(&texts, 2, &PBleuScorer, seed).unwrap(), vec![0, 2]);
    }

    #[test]
    fn prompt_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_prompt_dump(dir.path(), "item/1", "hello").unwrap();
        assert_eq!(path.file_name().unwrap(), "item_1.txt");
        assert_eq!(fs::read_to_string(path).unwrap(), "hello");
    }
}
