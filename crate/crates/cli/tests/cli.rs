use std::path::Path;
use std::process::{Command, Output};

fn yoas(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yoas"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("YOAS_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stage_out_of_order_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = yoas(dir.path(), &["synthesize"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("plan.json") && msg.contains("deduce"), "{msg}");
}

#[test]
fn bad_configuration_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gan]\nno_such_key = 1\n").unwrap();
    let o = yoas(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-corpus"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    std::fs::write(&cfg, "[gan]\nheads = 0\n").unwrap();
    assert_eq!(yoas(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-corpus"]).status.code(), Some(1));
    assert_eq!(yoas(dir.path(), &["--jobs", "0", "gen-corpus"]).status.code(), Some(1));
    assert_eq!(yoas(dir.path(), &["no-such-stage"]).status.code(), Some(1));
    assert_eq!(yoas(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unchanged_stages_are_skipped_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let first = yoas(dir.path(), &["gen-corpus"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let index = std::fs::read(dir.path().join("corpus/index.json")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["preset"], "desk");
    assert!(manifest["stages"]["gen-corpus"]["fingerprint"].is_string());

    let again = yoas(dir.path(), &["gen-corpus"]);
    assert!(stderr(&again).contains("gen-corpus: up to date"), "{}", stderr(&again));

    let forced = yoas(dir.path(), &["--force", "gen-corpus"]);
    assert!(stderr(&forced).contains("gen-corpus: running"), "{}", stderr(&forced));
    assert_eq!(std::fs::read(dir.path().join("corpus/index.json")).unwrap(), index);

    let reseeded = yoas(dir.path(), &["--seed", "8", "gen-corpus"]);
    assert!(stderr(&reseeded).contains("gen-corpus: running"), "{}", stderr(&reseeded));

    let prepared = yoas(dir.path(), &["--seed", "8", "prepare"]);
    assert!(prepared.status.success(), "{}", stderr(&prepared));
    assert!(dir.path().join("divisions.json").exists());
}
