use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stylerank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylerank"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const MR: &str = "name = nameVariable | eattype = pub | food = English | pricerange = high | area = city centre \
                  | familyfriendly = no | near = nearVariable";

#[test]
fn linearize_honours_negation_flag() {
    let plain = stdout(&stylerank(&["linearize", MR]));
    assert_eq!(plain.trim(), "nameVariable pub English high city centre family friendly nearVariable");
    let negated = stdout(&stylerank(&["linearize", MR, "--negate-false-booleans"]));
    assert!(negated.contains("not family friendly"));
}

#[test]
fn parse_emits_json() {
    let out = stdout(&stylerank(&["parse", "inform(name [F1 2014], has_multiplayer [yes])"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["domain"], "videogame");
    assert_eq!(v["dialogue_act"], "inform");
    assert_eq!(v["slots"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_mr_fails_cleanly() {
    let out = stylerank(&["parse", "name = "]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_personality_is_reported() {
    let config = workspace().join("configs/mock_personage.toml");
    let out = stylerank(&["prompt", "--config", config.to_str().unwrap(), "--mr", MR]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("personality"));
}

#[test]
fn mock_run_writes_reports_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace().join("configs/mock_personage.toml");
    let config = config.to_str().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");

    let table = stdout(&stylerank(&["run", "--config", config, "--output-dir", first.to_str().unwrap()]));
    assert!(table.starts_with("metric,BR,AR"));
    for f in ["report.json", "report.csv", "scores.jsonl", "ranked.csv", "replay.jsonl"] {
        assert!(first.join(f).exists(), "{f} missing");
    }

    let replay = first.join("replay.jsonl");
    stdout(&stylerank(&[
        "run", "--config", config, "--backend", "replay", "--replay", replay.to_str().unwrap(),
        "--output-dir", second.to_str().unwrap(),
    ]));
    let a = std::fs::read(first.join("report.json")).unwrap();
    let b = std::fs::read(second.join("report.json")).unwrap();
    assert_eq!(a, b);

    let scores = first.join("scores.jsonl");
    let corr = stdout(&stylerank(&["correlate", "--scores", scores.to_str().unwrap()]));
    assert!(corr.lines().any(|l| l.contains("\"pbleu\"")));
    let ranked = stdout(&stylerank(&["rank", "--scores", scores.to_str().unwrap(), "--rf", "rf2"]));
    assert!(ranked.lines().nth(1).unwrap().contains(",1,RF2,"));
}
