//! Corpus loading, the overgenerate-and-rank experiment loop, reports,
//! correlation study and significance testing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    stable_hash, BackendError, BigramFluency, ConstantFluency, FluencyProvider, GenerationRequest,
    Generator, MockBackend, MockNoise, RecordingBackend, RemoteBackend, RemoteConfig,
    RemoteFluency, ReplayBackend,
};
use crate::linearizer::{Linearizer, LinearizerConfig};
use crate::metrics::{
    local_scorer, pearson, BleuStats, MetricError, RemoteSimilarity, SimilarityScorer,
    ValueLexicon,
};
use crate::mr::{parse_mr, Domain, MeaningRepresentation, Personality};
use crate::prompts::{
    build_prompt, select_examples, write_prompt_dump, Demonstration, PersonalityMode, PromptFormat,
    PromptSpec, Sampling,
};
use crate::ranking::{rank, CandidateScore, RankError, RankingFunction, Scorers};
use crate::sidecar::SidecarClient;
use crate::style::{FallbackClassifier, LocalStyleScorer, RemoteStyleClassifier, StyleClassifier};
use crate::text::word_tokens;

/// Largest tolerated share of malformed dataset rows.
pub const MAX_MALFORMED_SHARE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {reason}")]
    Dataset { path: String, reason: String },
    #[error("{path}: {malformed} of {total} rows are malformed")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub demonstrations: Vec<Demonstration>,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    mr: String,
    #[serde(default, rename = "ref")]
    reference: String,
    #[serde(default)]
    personality: String,
}

/// Reads a CSV with `mr`, `ref` and (optionally empty) `personality`
/// columns. Malformed rows are skipped with a warning; more than 10% of
/// them aborts.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, ExperimentError> {
    load_dataset_with(path, &Linearizer::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, linearizer: &Linearizer) -> Result<Dataset, ExperimentError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| ExperimentError::Dataset {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if !headers.iter().any(|h| h.trim() == "mr") {
        return Err(ExperimentError::Dataset {
            path: path.display().to_string(),
            reason: "missing `mr` column".into(),
        });
    }
    let mut demonstrations = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    for record in reader.records() {
        total += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                skipped.push(SkippedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parsed = record
            .deserialize::<RawRow>(Some(&headers))
            .map_err(|e| e.to_string())
            .and_then(|row| {
                let mr = parse_mr(&row.mr).map_err(|e| e.to_string())?;
                let personality = if row.personality.trim().is_empty() {
                    mr.target_personality()
                } else {
                    Some(row.personality.parse::<Personality>().map_err(|e| e.to_string())?)
                };
                Ok(Demonstration::with_linearizer(
                    mr.with_personality(None),
                    row.reference.trim(),
                    personality,
                    linearizer,
                ))
            });
        match parsed {
            Ok(d) => demonstrations.push(d),
            Err(reason) => {
                log::warn!("{}:{line}: skipping row: {reason}", path.display());
                skipped.push(SkippedRow { line, reason });
            }
        }
    }
    if total > 0 && skipped.len() as f64 > MAX_MALFORMED_SHARE * total as f64 {
        return Err(ExperimentError::TooManyMalformed {
            path: path.display().to_string(),
            malformed: skipped.len(),
            total,
        });
    }
    Ok(Dataset {
        demonstrations,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluencyKind {
    Bigram,
    Remote,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingKind {
    Random,
    Diverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Specific,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub noise: MockNoise,
    pub remote: RemoteConfig,
    pub replay: Option<PathBuf>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            noise: MockNoise::default(),
            remote: RemoteConfig::default(),
            replay: None,
            temperature: 0.7,
            top_p: 1.0,
            max_new_tokens: 120,
        }
    }
}

/// Similarity terms of the ranking functions; each names a local scorer
/// (`pbleu`, `token-f1`) or a metric served by the scorer service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub pbbleu: Option<String>,
    pub pbleurt: Option<String>,
    pub pbert: Option<String>,
    /// Scorer for diverse example selection.
    pub selection: String,
}

/// Experiment settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub format: PromptFormat,
    pub k: usize,
    pub personality_mode: ModeKind,
    /// `dataset` (each row's label), `all` (every test MR once per
    /// personality) or a single personality label.
    pub target: String,
    pub sampling: SamplingKind,
    pub seed: u64,
    pub n: usize,
    pub rf: String,
    pub backend: BackendConfig,
    pub classifier: ClassifierKind,
    pub classifier_fallback: bool,
    pub fluency: FluencyKind,
    pub fluency_constant: f64,
    pub sidecar_url: Option<String>,
    pub similarity: SimilarityConfig,
    pub linearizer: LinearizerConfig,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub dump_prompts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: PathBuf::new(),
            test: PathBuf::new(),
            format: PromptFormat::Tst,
            k: 10,
            personality_mode: ModeKind::Specific,
            target: "dataset".into(),
            sampling: SamplingKind::Random,
            seed: 0,
            n: 10,
            rf: "rf1".into(),
            backend: BackendConfig::default(),
            classifier: ClassifierKind::Local,
            classifier_fallback: false,
            fluency: FluencyKind::Bigram,
            fluency_constant: 1.0,
            sidecar_url: None,
            similarity: SimilarityConfig {
                selection: "pbleu".into(),
                ..Default::default()
            },
            linearizer: LinearizerConfig::default(),
            output_dir: PathBuf::from("out"),
            workers: 4,
            dump_prompts: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a TOML file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.train, &mut config.test, &mut config.output_dir] {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        }
        if let Some(r) = config.backend.replay.as_mut() {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
        Ok(config)
    }

    pub fn ranking_function(&self) -> Result<RankingFunction, ExperimentError> {
        self.rf.parse().map_err(|e: RankError| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        for (name, p) in [("train", &self.train), ("test", &self.test)] {
            if !p.is_file() {
                return bad(format!("{name} file {} does not exist", p.display()));
            }
        }
        if self.backend.kind == BackendKind::Replay
            && !self.backend.replay.as_ref().is_some_and(|p| p.is_file())
        {
            return bad("replay backend needs an existing `backend.replay` file".into());
        }
        if !(self.fluency_constant > 0.0 && self.fluency_constant <= 1.0) {
            return bad("fluency_constant must lie in (0, 1]".into());
        }
        self.prompt_spec(Personality::Agreeable).validate()?;
        self.ranking_function()?;
        self.parse_target()?;
        Ok(())
    }

    fn parse_target(&self) -> Result<Target, ExperimentError> {
        match self.target.trim().to_ascii_lowercase().as_str() {
            "dataset" => Ok(Target::Dataset),
            "all" => Ok(Target::All),
            other => other
                .parse()
                .map(Target::Fixed)
                .map_err(|e| ExperimentError::Config(format!("target: {e}"))),
        }
    }

    pub fn prompt_spec(&self, target: Personality) -> PromptSpec {
        PromptSpec {
            format: self.format,
            k: self.k,
            personality_mode: match self.personality_mode {
                ModeKind::Specific => PersonalityMode::Specific(target),
                ModeKind::All => PersonalityMode::All,
            },
            sampling: match self.sampling {
                SamplingKind::Random => Sampling::Random(self.seed),
                SamplingKind::Diverse => Sampling::Diverse(self.seed),
            },
        }
    }

    fn sidecar(&self) -> Result<SidecarClient, ExperimentError> {
        self.sidecar_url
            .as_deref()
            .map(SidecarClient::new)
            .ok_or_else(|| ExperimentError::Config("a remote scorer needs `sidecar_url`".into()))
    }
}

enum Target {
    Dataset,
    All,
    Fixed(Personality),
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item_id: String,
    pub target: Personality,
    pub selected_index: usize,
    pub selected_text: String,
    pub rf_value: f64,
    pub sacc: f64,
    pub pac_prob: f64,
    pub predicted: Personality,
    pub perfect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item_id: String,
    pub reason: String,
}

/// Aggregates before (whole pool) and after (selected only) ranking.
/// Percentages carry two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub ranking_function: String,
    pub items: usize,
    pub candidates: usize,
    pub excluded: usize,
    pub sacc_br: f64,
    pub sacc_ar: f64,
    pub pac_br: f64,
    pub pac_ar: f64,
    pub perfect_br: f64,
    pub perfect_ar: f64,
    pub corpus_pbleu_ar: f64,
    pub exclusions: Vec<Exclusion>,
    pub rows: Vec<ItemRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric,BR,AR` table.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,BR,AR\n");
        out.push_str(&format!("SACC,{:.2},{:.2}\n", self.sacc_br, self.sacc_ar));
        out.push_str(&format!("PAC,{:.2},{:.2}\n", self.pac_br, self.pac_ar));
        out.push_str(&format!("Perfect,{:.2},{:.2}\n", self.perfect_br, self.perfect_ar));
        out.push_str(&format!("BLEU,,{:.3}\n", self.corpus_pbleu_ar));
        out
    }
}

fn percent(num: f64, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    round_to(100.0 * num / den as f64, 2)
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

/// Scored candidate pool for one test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub item_id: String,
    pub pseudo_reference: String,
    pub scores: Vec<CandidateScore>,
}

/// Outcome of one item: its scored pool or the reason it was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ItemOutcome {
    Scored(ItemScores),
    Excluded(Exclusion),
}

/// Builds the report from scored pools. BR figures do not depend on `rf`.
/// Per-item SACC is clamped at zero before averaging.
pub fn build_report(outcomes: &[ItemOutcome], rf: &RankingFunction) -> Result<ExperimentReport, ExperimentError> {
    let mut exclusions = Vec::new();
    let mut rows = Vec::new();
    let (mut pool_n, mut pool_sacc, mut pool_pac, mut pool_perfect) = (0usize, 0.0, 0usize, 0usize);
    let mut bleu = BleuStats::default();
    let mut sacc_ar = 0.0;
    let (mut pac_ar, mut perfect_ar) = (0usize, 0usize);
    for outcome in outcomes {
        let item = match outcome {
            ItemOutcome::Excluded(e) => {
                exclusions.push(e.clone());
                continue;
            }
            ItemOutcome::Scored(item) if item.scores.is_empty() => {
                exclusions.push(Exclusion {
                    item_id: item.item_id.clone(),
                    reason: "no candidates".into(),
                });
                continue;
            }
            ItemOutcome::Scored(item) => item,
        };
        for s in &item.scores {
            pool_n += 1;
            pool_sacc += s.sacc.max(0.0);
            pool_pac += s.personality_correct() as usize;
            pool_perfect += s.is_perfect() as usize;
        }
        let best = rank(&item.scores, rf)?.swap_remove(0);
        let s = &best.score;
        sacc_ar += s.sacc.max(0.0);
        pac_ar += s.personality_correct() as usize;
        perfect_ar += s.is_perfect() as usize;
        bleu += if s.text.trim().is_empty() {
            BleuStats {
                reference_len: word_tokens(&item.pseudo_reference).len() as u64,
                ..Default::default()
            }
        } else {
            BleuStats::from_segment(&s.text, &[item.pseudo_reference.as_str()])?
        };
        rows.push(ItemRow {
            item_id: item.item_id.clone(),
            target: s.target,
            selected_index: s.generation_index,
            selected_text: s.text.clone(),
            rf_value: best.value,
            sacc: s.sacc,
            pac_prob: s.pac_prob,
            predicted: s.predicted,
            perfect: s.is_perfect(),
        });
    }
    let items = rows.len();
    Ok(ExperimentReport {
        ranking_function: rf.to_string(),
        items,
        candidates: pool_n,
        excluded: exclusions.len(),
        sacc_br: percent(pool_sacc, pool_n),
        sacc_ar: percent(sacc_ar, items),
        pac_br: percent(pool_pac as f64, pool_n),
        pac_ar: percent(pac_ar as f64, items),
        perfect_br: percent(pool_perfect as f64, pool_n),
        perfect_ar: percent(perfect_ar as f64, items),
        corpus_pbleu_ar: if items == 0 { 0.0 } else { round_to(bleu.score(false), 3) },
        exclusions,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Running

struct TestItem {
    id: String,
    mr: MeaningRepresentation,
    target: Personality,
}

fn test_items(test: &Dataset, target: &Target) -> (Vec<TestItem>, Vec<Exclusion>) {
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (i, d) in test.demonstrations.iter().enumerate() {
        let targets: Vec<Personality> = match target {
            Target::Dataset => d.personality.into_iter().collect(),
            Target::All => Personality::ALL.to_vec(),
            Target::Fixed(p) => vec![*p],
        };
        if targets.is_empty() {
            excluded.push(Exclusion {
                item_id: format!("{i:05}"),
                reason: "no target personality".into(),
            });
        }
        for p in targets {
            items.push(TestItem {
                id: format!("{i:05}-{p}"),
                mr: d.mr.clone().with_personality(Some(p)),
                target: p,
            });
        }
    }
    (items, excluded)
}

/// A local scorer by id, else the named metric on the scorer service.
pub fn similarity_scorer(
    id: &str,
    config: &ExperimentConfig,
) -> Result<Box<dyn SimilarityScorer>, ExperimentError> {
    match local_scorer(id) {
        Some(s) => Ok(s),
        None => Ok(Box::new(RemoteSimilarity::new(config.sidecar()?, id))),
    }
}

/// Scoring providers resolved from a config.
pub struct ScoringStack {
    restaurant: ValueLexicon,
    videogame: ValueLexicon,
    linearizer: Linearizer,
    classifier: Box<dyn StyleClassifier>,
    fluency: Box<dyn FluencyProvider>,
    pbbleu: Option<Box<dyn SimilarityScorer>>,
    pbleurt: Option<Box<dyn SimilarityScorer>>,
    pbert: Option<Box<dyn SimilarityScorer>>,
}

impl ScoringStack {
    /// `fluency_corpus` trains the bigram model when that provider is chosen.
    pub fn from_config<S: AsRef<str>>(config: &ExperimentConfig, fluency_corpus: &[S]) -> Result<Self, ExperimentError> {
        let classifier: Box<dyn StyleClassifier> = match (config.classifier, config.classifier_fallback) {
            (ClassifierKind::Local, _) => Box::new(LocalStyleScorer::default()),
            (ClassifierKind::Remote, false) => Box::new(RemoteStyleClassifier::new(config.sidecar()?)),
            (ClassifierKind::Remote, true) => Box::new(FallbackClassifier::new(
                RemoteStyleClassifier::new(config.sidecar()?),
                LocalStyleScorer::default(),
            )),
        };
        let fluency: Box<dyn FluencyProvider> = match config.fluency {
            FluencyKind::Bigram => Box::new(BigramFluency::train(fluency_corpus, 0.1)),
            FluencyKind::Remote => Box::new(RemoteFluency::new(config.sidecar()?)),
            FluencyKind::Constant => Box::new(ConstantFluency(config.fluency_constant)),
        };
        let optional = |id: &Option<String>| id.as_deref().map(|id| similarity_scorer(id, config)).transpose();
        Ok(ScoringStack {
            restaurant: ValueLexicon::builtin(Domain::Restaurant),
            videogame: ValueLexicon::builtin(Domain::VideoGame),
            linearizer: Linearizer::default().with_config(config.linearizer),
            classifier,
            fluency,
            pbbleu: optional(&config.similarity.pbbleu)?,
            pbleurt: optional(&config.similarity.pbleurt)?,
            pbert: optional(&config.similarity.pbert)?,
        })
    }

    pub fn scorers(&self) -> Scorers<'_> {
        Scorers {
            restaurant_lexicon: &self.restaurant,
            videogame_lexicon: &self.videogame,
            linearizer: &self.linearizer,
            classifier: self.classifier.as_ref(),
            fluency: self.fluency.as_ref(),
            pbbleu: self.pbbleu.as_deref(),
            pbleurt: self.pbleurt.as_deref(),
            pbert: self.pbert.as_deref(),
        }
    }
}

/// The configured generator, without replay recording.
pub fn generator(config: &ExperimentConfig) -> Result<Box<dyn Generator>, ExperimentError> {
    Ok(match config.backend.kind {
        BackendKind::Replay => {
            let path = config
                .backend
                .replay
                .as_ref()
                .ok_or_else(|| ExperimentError::Config("replay backend needs `backend.replay`".into()))?;
            Box::new(ReplayBackend::load(path)?)
        }
        BackendKind::Mock => Box::new(MockBackend::new(config.backend.noise, config.seed)?),
        BackendKind::Remote => Box::new(RemoteBackend::new(config.backend.remote.clone())?),
    })
}

fn make_backend(config: &ExperimentConfig) -> Result<Box<dyn Generator>, ExperimentError> {
    let inner = generator(config)?;
    if config.backend.kind == BackendKind::Replay {
        return Ok(inner);
    }
    let log_path = config.output_dir.join("replay.jsonl");
    Ok(Box::new(RecordingBackend::create(BoxedGenerator(inner), log_path)?))
}

struct BoxedGenerator(Box<dyn Generator>);

impl Generator for BoxedGenerator {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        self.0.complete(request)
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub outcomes: Vec<ItemOutcome>,
}

/// Runs the configured experiment and writes `report.json`, `report.csv`,
/// `scores.jsonl` and `ranked.csv` (plus `replay.jsonl` for live backends)
/// to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let rf = config.ranking_function()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;
    let linearizer = Linearizer::default().with_config(config.linearizer);

    let train = load_dataset_with(&config.train, &linearizer)?;
    let test = load_dataset_with(&config.test, &linearizer)?;
    let (items, mut pre_excluded) = test_items(&test, &config.parse_target()?);

    // demonstrations are chosen once per target personality
    let selection = similarity_scorer(&config.similarity.selection, config)?;
    let mut examples: BTreeMap<Personality, Vec<Demonstration>> = BTreeMap::new();
    for p in Personality::ALL {
        if items.iter().any(|it| it.target == p) {
            let spec = config.prompt_spec(p);
            examples.insert(p, select_examples(&train.demonstrations, &spec, selection.as_ref())?);
        }
    }

    let refs: Vec<&str> = train.demonstrations.iter().map(|d| d.reference.as_str()).collect();
    let stack = ScoringStack::from_config(config, &refs)?;
    let scorers = stack.scorers();
    let backend = make_backend(config)?;

    let prompts_dir = config.output_dir.join("prompts");
    let run_item = |item: &TestItem| -> ItemOutcome {
        let exclude = |reason: String| {
            log::warn!("excluding item {}: {reason}", item.id);
            ItemOutcome::Excluded(Exclusion {
                item_id: item.id.clone(),
                reason,
            })
        };
        let prompt = match build_prompt(config.format, &examples[&item.target], &item.mr, &linearizer) {
            Ok(p) => p,
            Err(e) => return exclude(e.to_string()),
        };
        if config.dump_prompts {
            if let Err(e) = write_prompt_dump(&prompts_dir, &item.id, &prompt) {
                log::warn!("{e}");
            }
        }
        let mut request = GenerationRequest::new(item.id.clone(), prompt)
            .with_context(item.mr.clone(), item.target);
        request.n = config.n;
        request.temperature = config.backend.temperature;
        request.top_p = config.backend.top_p;
        request.max_new_tokens = config.backend.max_new_tokens;
        request.stop_sequences = config.format.stop_sequences();
        let candidates = match backend.generate(&request) {
            Ok(c) => c,
            Err(e) => return exclude(e.to_string()),
        };
        match crate::ranking::score_pool(&candidates, &item.mr, item.target, &scorers) {
            Ok(scores) => ItemOutcome::Scored(ItemScores {
                item_id: item.id.clone(),
                pseudo_reference: linearizer.linearize(&item.mr),
                scores,
            }),
            Err(e) => exclude(e.to_string()),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    // indexed collect keeps item order regardless of completion order
    let generated: Vec<ItemOutcome> = pool.install(|| items.par_iter().map(run_item).collect());
    drop(backend);

    let mut outcomes: Vec<ItemOutcome> = pre_excluded.drain(..).map(ItemOutcome::Excluded).collect();
    outcomes.extend(generated);
    let report = build_report(&outcomes, &rf)?;
    write_outputs(&config.output_dir, &report, &outcomes, &rf)?;
    Ok(ExperimentOutcome { report, outcomes })
}

/// Writes the report files and the per-candidate score log.
pub fn write_outputs(
    dir: &Path,
    report: &ExperimentReport,
    outcomes: &[ItemOutcome],
    rf: &RankingFunction,
) -> Result<(), ExperimentError> {
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))
    };
    write("report.json", &report.to_json())?;
    write("report.csv", &report.summary_csv())?;
    let mut jsonl = String::new();
    for o in outcomes {
        jsonl.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        jsonl.push('\n');
    }
    write("scores.jsonl", &jsonl)?;
    let path = dir.join("ranked.csv");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut ranked_all = Vec::new();
    for o in outcomes {
        if let ItemOutcome::Scored(item) = o {
            if !item.scores.is_empty() {
                ranked_all.extend(rank(&item.scores, rf)?);
            }
        }
    }
    crate::ranking::write_ranked_csv(&mut out, &ranked_all, rf)?;
    out.flush().map_err(|e| io_err(&path, e))
}

/// Reads a `scores.jsonl` file written by [`run_experiment`].
pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ItemOutcome>, ExperimentError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExperimentError::Dataset {
                path: format!("{}:{}", path.display(), i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub n: usize,
    /// `None` when a column has zero variance.
    pub r: Option<f64>,
}

/// Pearson r between SACC and each similarity metric present on every
/// candidate.
pub fn correlation_study(scores: &[CandidateScore]) -> Result<Vec<CorrelationRow>, ExperimentError> {
    if scores.len() < 2 {
        return Err(MetricError::TooFewPoints(scores.len()).into());
    }
    let sacc: Vec<f64> = scores.iter().map(|s| s.sacc).collect();
    type Column = (&'static str, fn(&CandidateScore) -> Option<f64>);
    let columns: [Column; 4] = [
        ("pbleu", |s| s.pbleu),
        ("pbbleu", |s| s.pbbleu),
        ("pbleurt", |s| s.pbleurt),
        ("pbert", |s| s.pbert),
    ];
    let mut rows = Vec::new();
    for (name, get) in columns {
        let Some(values) = scores.iter().map(get).collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let r = match pearson(&sacc, &values) {
            Ok(r) => Some(r),
            Err(MetricError::ZeroVariance) => None,
            Err(e) => return Err(e.into()),
        };
        rows.push(CorrelationRow {
            metric: name.to_string(),
            n: values.len(),
            r,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_difference: f64,
    pub p_value: f64,
    pub resamples: usize,
}

/// Two-sided paired bootstrap test on per-item differences `a - b`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<BootstrapResult, ExperimentError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()).into());
    }
    if a.is_empty() || resamples == 0 {
        return Err(MetricError::EmptyInput("paired samples").into());
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut le, mut ge) = (0usize, 0usize);
    for _ in 0..resamples {
        let m = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64;
        le += (m <= 0.0) as usize;
        ge += (m >= 0.0) as usize;
    }
    let p = (2.0 * le.min(ge) as f64 / resamples as f64).min(1.0);
    Ok(BootstrapResult {
        mean_difference: mean,
        p_value: p,
        resamples,
    })
}

/// Seed for an item-level stream derived from a run seed.
pub fn item_seed(seed: u64, item_id: &str) -> u64 {
    seed ^ stable_hash(item_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_well_formed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "mr,ref,personality\n\
             \"name = nameVariable | eattype = pub\",It is a pub.,agreeable\n\
             \"name = nameVariable | food = Italian\",Italian food.,extravert\n\
             \"name = nameVariable | area = riverside\",By the river.,DISAGREEABLE\n",
        );
        let d = load_dataset(&p).unwrap();
        assert_eq!(d.demonstrations.len(), 3);
        assert!(d.skipped.is_empty());
        assert_eq!(d.demonstrations[2].personality, Some(Personality::Disagreeable));
        assert_eq!(d.demonstrations[0].pseudo_reference, "nameVariable pub");
    }

    #[test]
    fn skips_and_aborts_on_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("mr,ref,personality\n");
        for i in 0..10 {
            body.push_str(&format!("\"name = n{i}\",ref,agreeable\n"));
        }
        body.push_str("\"name = \",bad,agreeable\n");
        let d = load_dataset(write(dir.path(), "ok.csv", &body)).unwrap();
        assert_eq!(d.demonstrations.len(), 10);
        assert_eq!(d.skipped.len(), 1);
        assert_eq!(d.skipped[0].line, 12);

        body.push_str("\"name = x | name = y\",bad,agreeable\n");
        assert!(matches!(
            load_dataset(write(dir.path(), "bad.csv", &body)),
            Err(ExperimentError::TooManyMalformed { malformed: 2, total: 12, .. })
        ));
    }

    #[test]
    fn config_from_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            train = "train.csv"
            test = "test.csv"
            format = "d2t"
            k = 5
            personality_mode = "all"
            sampling = "diverse"
            rf = "rf2"
            [backend]
            kind = "mock"
            noise = { p_drop = 0.2 }
            "#,
        )
        .unwrap();
        assert_eq!(c.format, PromptFormat::D2t);
        assert_eq!(c.backend.noise.p_drop, 0.2);
        assert_eq!(c.n, 10);
        assert_eq!(c.ranking_function().unwrap(), RankingFunction::Rf2);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn bootstrap_detects_clear_difference() {
        let a: Vec<f64> = (0..50).map(|i| 1.0 + (i % 3) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 5) as f64 * 0.01).collect();
        let r = paired_bootstrap(&a, &b, 1000, 7).unwrap();
        assert!(r.p_value < 0.01);
        let same = paired_bootstrap(&a, &a, 1000, 7).unwrap();
        assert_eq!(same.p_value, 1.0);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent(2.0, 3), 66.67);
        assert_eq!(percent(0.0, 0), 0.0);
    }
}
