use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stylerank::backend::{Candidate, GenerationRequest};
use stylerank::experiment::{
    build_report, correlation_study, generator, load_dataset_with, load_scores, run_experiment,
    similarity_scorer, write_outputs, BackendKind, ExperimentConfig, ItemOutcome, ModeKind, SamplingKind,
    ScoringStack,
};
use stylerank::linearizer::{Linearizer, LinearizerConfig};
use stylerank::metrics::align::align_slots;
use stylerank::metrics::lexicon::ValueLexicon;
use stylerank::mr::{parse_mr, serialize_mr, MeaningRepresentation, Personality};
use stylerank::prompts::{build_prompt, select_examples, Demonstration, PromptFormat};
use stylerank::ranking::{rank, score_pool, write_ranked_csv};

#[derive(Parser)]
#[command(name = "stylerank", version, about = "Personality-styled data-to-text with overgenerate-and-rank")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an MR in either format and print it as JSON.
    Parse { mr: String },
    /// Print the pseudo-reference for an MR.
    Linearize {
        mr: String,
        /// Render `no` booleans as "not <phrase>".
        #[arg(long)]
        negate_false_booleans: bool,
        /// Prefix ViGGO output with the dialogue act.
        #[arg(long)]
        dialogue_act: bool,
    },
    /// Print the demonstrations a prompt would use, one JSON object per line.
    SelectExamples(#[command(flatten)] Settings),
    /// Print the few-shot prompt for one MR.
    Prompt {
        #[arg(long)]
        mr: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Generate candidates for one MR, one JSON object per line.
    Generate {
        #[arg(long)]
        mr: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Score texts against an MR and print one JSON object per text.
    Score {
        #[arg(long)]
        mr: String,
        /// Texts to score; may be repeated.
        #[arg(long = "text", required = true)]
        texts: Vec<String>,
        /// Also print the slot-level alignment.
        #[arg(long)]
        explain: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Re-rank a scores.jsonl file under a ranking function.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        /// Directory for the rewritten report files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a full experiment.
    Run(#[command(flatten)] Settings),
    /// Pearson r between SACC and each similarity metric in a scores.jsonl.
    Correlate {
        #[arg(long)]
        scores: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Random,
    Diverse,
}

/// Options shared by the experiment-shaped commands. Values given here
/// override the config file.
#[derive(Args, Clone, Default)]
struct Settings {
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// `rf1`..`rf5` or a product such as `sacc*pac`.
    #[arg(long)]
    rf: Option<String>,
    /// `d2t` or `tst`.
    #[arg(long)]
    format: Option<PromptFormat>,
    #[arg(long)]
    k: Option<usize>,
    /// Target personality.
    #[arg(long)]
    personality: Option<Personality>,
    /// Draw demonstrations from every personality.
    #[arg(long)]
    all_personalities: bool,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    /// Candidates per MR.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Completion endpoint for the remote backend.
    #[arg(long)]
    url: Option<String>,
    /// Replay log for the replay backend.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Scorer service base URL.
    #[arg(long)]
    sidecar_url: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.backend {
            c.backend.kind = match v {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Remote => BackendKind::Remote,
                BackendArg::Replay => BackendKind::Replay,
            };
        }
        if let Some(v) = &self.rf {
            c.rf = v.clone();
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if self.all_personalities {
            c.personality_mode = ModeKind::All;
        }
        if let Some(p) = self.personality {
            c.target = p.to_string();
        }
        if let Some(v) = self.sampling {
            c.sampling = match v {
                SamplingArg::Random => SamplingKind::Random,
                SamplingArg::Diverse => SamplingKind::Diverse,
            };
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = &self.train {
            c.train = v.clone();
        }
        if let Some(v) = &self.test {
            c.test = v.clone();
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.url {
            c.backend.remote.url = v.clone();
        }
        if let Some(v) = &self.replay {
            c.backend.replay = Some(v.clone());
        }
        if let Some(v) = &self.sidecar_url {
            c.sidecar_url = Some(v.clone());
        }
        Ok(c)
    }
}

/// The personality named by `--personality`, the config target, or the MR.
fn target_personality(config: &ExperimentConfig, mr: Option<&MeaningRepresentation>) -> Result<Personality> {
    if let Ok(p) = config.target.parse::<Personality>() {
        return Ok(p);
    }
    if let Some(p) = mr.and_then(MeaningRepresentation::target_personality) {
        return Ok(p);
    }
    bail!("no target personality: pass --personality or add `| personality = ...` to the MR")
}

fn linearizer(config: &ExperimentConfig) -> Linearizer {
    Linearizer::default().with_config(config.linearizer)
}

fn demonstrations(config: &ExperimentConfig, target: Personality) -> Result<Vec<Demonstration>> {
    if config.train.as_os_str().is_empty() {
        bail!("a training set is needed: pass --train or set `train` in the config");
    }
    let train = load_dataset_with(&config.train, &linearizer(config))
        .with_context(|| format!("loading {}", config.train.display()))?;
    let scorer = similarity_scorer(&config.similarity.selection, config)?;
    Ok(select_examples(&train.demonstrations, &config.prompt_spec(target), scorer.as_ref())?)
}

fn prompt_for(config: &ExperimentConfig, mr_text: &str) -> Result<(MeaningRepresentation, Personality, String)> {
    let mr = parse_mr(mr_text)?;
    let target = target_personality(config, Some(&mr))?;
    let mr = mr.with_personality(Some(target));
    let examples = demonstrations(config, target)?;
    let prompt = build_prompt(config.format, &examples, &mr, &linearizer(config))?;
    Ok((mr, target, prompt))
}

fn generate(config: &ExperimentConfig, mr_text: &str) -> Result<(MeaningRepresentation, Personality, Vec<Candidate>)> {
    let (mr, target, prompt) = prompt_for(config, mr_text)?;
    let mut request = GenerationRequest::new("cli", prompt).with_context(mr.clone(), target);
    request.n = config.n;
    request.temperature = config.backend.temperature;
    request.top_p = config.backend.top_p;
    request.max_new_tokens = config.backend.max_new_tokens;
    request.stop_sequences = config.format.stop_sequences();
    let candidates = generator(config)?.generate(&request)?;
    Ok((mr, target, candidates))
}

fn fluency_corpus(config: &ExperimentConfig) -> Result<Vec<String>> {
    if config.train.as_os_str().is_empty() {
        return Ok(Vec::new());
    }
    let train = load_dataset_with(&config.train, &linearizer(config))?;
    Ok(train.demonstrations.into_iter().map(|d| d.reference).collect())
}

fn print_json<T: serde::Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::Parse { mr } => {
            let parsed = parse_mr(&mr)?;
            let canonical = serialize_mr(&parsed, parsed.domain().native_format())?;
            let mut value = serde_json::to_value(&parsed)?;
            value["canonical"] = canonical.into();
            writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
        }
        Command::Linearize {
            mr,
            negate_false_booleans,
            dialogue_act,
        } => {
            let lin = Linearizer::default().with_config(LinearizerConfig {
                include_dialogue_act: dialogue_act,
                negate_false_booleans,
            });
            writeln!(out, "{}", lin.linearize(&parse_mr(&mr)?))?;
        }
        Command::SelectExamples(settings) => {
            let config = settings.resolve()?;
            let target = target_personality(&config, None)?;
            for d in demonstrations(&config, target)? {
                let mr = serialize_mr(&d.mr, d.mr.domain().native_format())?;
                print_json(
                    &mut out,
                    &serde_json::json!({
                        "mr": mr,
                        "ref": d.reference,
                        "personality": d.personality,
                        "pseudo_reference": d.pseudo_reference,
                    }),
                )?;
            }
        }
        Command::Prompt { mr, settings } => {
            let (_, _, prompt) = prompt_for(&settings.resolve()?, &mr)?;
            write!(out, "{prompt}")?;
            if !prompt.ends_with('\n') {
                writeln!(out)?;
            }
        }
        Command::Generate { mr, settings } => {
            let (_, _, candidates) = generate(&settings.resolve()?, &mr)?;
            for c in &candidates {
                print_json(&mut out, c)?;
            }
        }
        Command::Score {
            mr,
            texts,
            explain,
            settings,
        } => {
            let config = settings.resolve()?;
            let parsed = parse_mr(&mr)?;
            let target = target_personality(&config, Some(&parsed))?;
            let corpus = fluency_corpus(&config)?;
            let stack = ScoringStack::from_config(&config, &corpus)?;
            let candidates: Vec<Candidate> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| Candidate {
                    text: t.clone(),
                    raw_completion: t.clone(),
                    prompt_id: "cli".into(),
                    generation_index: i,
                    backend_id: "input".into(),
                })
                .collect();
            let scores = score_pool(&candidates, &parsed, target, &stack.scorers())?;
            let lexicon = ValueLexicon::builtin(parsed.domain());
            for s in &scores {
                let mut value = serde_json::to_value(s)?;
                if explain {
                    value["alignment"] = serde_json::to_value(align_slots(&s.text, &parsed, &lexicon)?)?;
                }
                print_json(&mut out, &value)?;
            }
        }
        Command::Rank { scores, out: dir, settings } => {
            let config = settings.resolve()?;
            let rf = config.ranking_function()?;
            let outcomes = load_scores(&scores)?;
            let report = build_report(&outcomes, &rf)?;
            match dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write_outputs(&dir, &report, &outcomes, &rf)?;
                    writeln!(out, "{}", report.summary_csv().trim_end())?;
                }
                None => {
                    let mut ranked = Vec::new();
                    for o in &outcomes {
                        if let ItemOutcome::Scored(item) = o {
                            if !item.scores.is_empty() {
                                ranked.extend(rank(&item.scores, &rf)?);
                            }
                        }
                    }
                    write_ranked_csv(&mut out, &ranked, &rf)?;
                }
            }
        }
        Command::Run(settings) => {
            let config = settings.resolve()?;
            let outcome = run_experiment(&config)?;
            log::info!("wrote results to {}", config.output_dir.display());
            writeln!(out, "{}", outcome.report.summary_csv().trim_end())?;
        }
        Command::Correlate { scores } => {
            let all: Vec<_> = load_scores(&scores)?
                .into_iter()
                .filter_map(|o| match o {
                    ItemOutcome::Scored(item) => Some(item.scores),
                    ItemOutcome::Excluded(_) => None,
                })
                .flatten()
                .collect();
            for row in correlation_study(&all)? {
                print_json(&mut out, &row)?;
            }
        }
    }
    Ok(())
}
