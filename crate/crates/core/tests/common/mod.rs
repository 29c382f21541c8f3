#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub struct SerCase {
    pub id: String,
    pub mr: String,
    pub utterance: String,
    pub expected: [u32; 4],
}

pub fn ser_cases() -> Vec<SerCase> {
    let text = std::fs::read_to_string(fixture("ser_cases.tsv")).expect("ser_cases.tsv");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 7, "bad fixture line: {line}");
            let n = |i: usize| cols[i].parse::<u32>().expect("count");
            SerCase {
                id: cols[0].to_string(),
                mr: cols[1].to_string(),
                utterance: cols[2].to_string(),
                expected: [n(3), n(4), n(5), n(6)],
            }
        })
        .collect()
}

pub struct StyleText {
    pub id: String,
    pub set: String,
    pub label: stylerank::mr::Personality,
    pub text: String,
}

pub fn style_texts() -> Vec<StyleText> {
    let text = std::fs::read_to_string(fixture("style_texts.tsv")).expect("style_texts.tsv");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 4, "bad fixture line: {line}");
            StyleText {
                id: cols[0].to_string(),
                set: cols[1].to_string(),
                label: cols[2].parse().expect("personality"),
                text: cols[3].to_string(),
            }
        })
        .collect()
}

const EATTYPES: [&str; 3] = ["pub", "restaurant", "coffee shop"];
const FOODS: [&str; 7] = ["English", "Italian", "French", "Chinese", "Indian", "Japanese", "Fast food"];
const PRICES: [&str; 3] = ["cheap", "moderate", "high"];
const AREAS: [&str; 2] = ["city centre", "riverside"];
const FRIENDLY: [&str; 2] = ["yes", "no"];

/// A seven-slot restaurant MR in the native format.
pub fn seven_slot_mr<R: rand::Rng>(rng: &mut R) -> String {
    use rand::seq::IndexedRandom;
    format!(
        "name = nameVariable | eattype = {} | food = {} | pricerange = {} | area = {} | familyfriendly = {} | near = nearVariable",
        EATTYPES.choose(rng).unwrap(),
        FOODS.choose(rng).unwrap(),
        PRICES.choose(rng).unwrap(),
        AREAS.choose(rng).unwrap(),
        FRIENDLY.choose(rng).unwrap(),
    )
}

/// Writes `train.csv` (`per_personality` rows per label, clean mock
/// references) and `test.csv` (`items` rows cycling through the labels).
pub fn write_synthetic_datasets(
    dir: &std::path::Path,
    per_personality: usize,
    items: usize,
    seed: u64,
) -> (PathBuf, PathBuf) {
    use rand::SeedableRng;
    use stylerank::backend::{mock_realize, MockNoise};
    use stylerank::metrics::lexicon::ValueLexicon;
    use stylerank::mr::{parse_mr, Domain, Personality};
    use stylerank::style::MarkerLexicon;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lexicon = ValueLexicon::builtin(Domain::Restaurant);
    let markers = MarkerLexicon::builtin();
    let noise = MockNoise {
        p_marker: 1.0,
        ..MockNoise::default()
    };

    let train = dir.join("train.csv");
    let mut w = csv::Writer::from_path(&train).unwrap();
    w.write_record(["mr", "ref", "personality"]).unwrap();
    for p in Personality::ALL {
        for _ in 0..per_personality {
            let mr = seven_slot_mr(&mut rng);
            let parsed = parse_mr(&mr).unwrap();
            let reference = mock_realize(&parsed, p, &noise, &lexicon, &markers, &mut rng);
            w.write_record([mr.as_str(), reference.as_str(), p.as_str()]).unwrap();
        }
    }
    w.flush().unwrap();

    let test = dir.join("test.csv");
    let mut w = csv::Writer::from_path(&test).unwrap();
    w.write_record(["mr", "ref", "personality"]).unwrap();
    for i in 0..items {
        let mr = seven_slot_mr(&mut rng);
        let p = Personality::ALL[i % Personality::ALL.len()];
        w.write_record([mr.as_str(), "", p.as_str()]).unwrap();
    }
    w.flush().unwrap();
    (train, test)
}

/// Mock-backend experiment with constant fluency and marker-free output,
/// so every candidate gets the same style distribution and fluency.
pub fn mock_config(
    train: PathBuf,
    test: PathBuf,
    out: PathBuf,
    p_drop: f64,
    seed: u64,
) -> stylerank::experiment::ExperimentConfig {
    use stylerank::experiment::{ExperimentConfig, FluencyKind};
    let mut config = ExperimentConfig {
        train,
        test,
        output_dir: out,
        seed,
        k: 5,
        n: 10,
        fluency: FluencyKind::Constant,
        ..ExperimentConfig::default()
    };
    config.backend.noise.p_drop = p_drop;
    config
}

pub fn bleu_pairs() -> Vec<(String, String)> {
    let text = std::fs::read_to_string(fixture("bleu_pairs.tsv")).expect("bleu_pairs.tsv");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (c, r) = l.split_once('\t').expect("two columns");
            (c.to_string(), r.to_string())
        })
        .collect()
}

/// Reference BLEU over whitespace-tokenized text, single reference. Written
/// from the textbook definition without sharing code with the library.
pub fn oracle_bleu(candidate: &str, reference: &str, smooth: bool) -> f64 {
    use std::collections::BTreeMap;
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let grams = |toks: &[&str], n: usize| {
        let mut m: BTreeMap<String, i64> = BTreeMap::new();
        for i in 0..toks.len().saturating_sub(n - 1) {
            *m.entry(toks[i..i + n].join(" ")).or_default() += 1;
        }
        m
    };
    let mut product = 1.0f64;
    for n in 1..=4 {
        let cg = grams(&c, n);
        let rg = grams(&r, n);
        let mut clipped = 0i64;
        for (g, k) in &cg {
            clipped += (*k).min(*rg.get(g).unwrap_or(&0));
        }
        let mut total = cg.values().sum::<i64>();
        if smooth && n > 1 {
            clipped += 1;
            total += 1;
        }
        if clipped == 0 || total == 0 {
            return 0.0;
        }
        product *= clipped as f64 / total as f64;
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * product.powf(0.25)
}
