use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pegsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pegsim")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('=')).unwrap_or_else(|| panic!("no {key} in {text}"))
}

#[test]
fn train_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = pegsim(dir.path(), &["train", "--episodes", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!pegsim(dir.path(), &["eval", "--bogus"]).status.success());
}

#[test]
fn short_training_is_reproducible_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        let out = pegsim(d, &["train", "--seed", "5", "--episodes", "6", "--log", &format!("{name}.tsv"), "--checkpoint", &format!("{name}.ck")]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(d.join("a.tsv")).unwrap(), fs::read(d.join("b.tsv")).unwrap());
    assert_eq!(fs::read(d.join("a.ck")).unwrap(), fs::read(d.join("b.ck")).unwrap());
    assert_eq!(fs::read_to_string(d.join("a.tsv")).unwrap().lines().count(), 7);

    let out = pegsim(d, &["eval", "--checkpoint", "a.ck", "--layout", "EvalA", "--episodes", "3", "--log", "ep.tsv", "--frames", "frames"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rate: f64 = value(&text, "success_rate").parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let mean: f64 = value(&text, "mean_episode_length").parse().unwrap();
    assert!(mean >= 1.0 && mean <= 200.0);
    assert!(d.join("frames/frame_000000.pgm").exists());
    assert!(fs::read_to_string(d.join("ep.tsv")).unwrap().lines().count() > 1);
}

#[test]
fn different_seeds_give_different_logs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pegsim(d, &["train", "--seed", "1", "--episodes", "3", "--log", "a.tsv", "--checkpoint", "a.ck"]);
    pegsim(d, &["train", "--seed", "2", "--episodes", "3", "--log", "b.tsv", "--checkpoint", "b.ck"]);
    assert_ne!(fs::read(d.join("a.tsv")).unwrap(), fs::read(d.join("b.tsv")).unwrap());
}

#[test]
fn trial_replays_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = pegsim(d, &["trial", "--mode", "manual", "--seed", "3", "--log", "t.jsonl"]);
    assert!(out.status.success());
    assert_eq!(value(&stdout(&out), "complete"), "true");
    assert_eq!(value(&stdout(&out), "legs"), "9");
    assert!(pegsim(d, &["replay", "--log", "t.jsonl"]).status.success());

    let text = fs::read_to_string(d.join("t.jsonl")).unwrap();
    let summary = text.lines().last().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(summary).unwrap();
    assert!(v["travel_length_mm"].as_f64().unwrap() > 0.0);
    v["travel_length_mm"] = serde_json::json!(1.0);
    let edited = v.to_string();
    fs::write(d.join("bad.jsonl"), text.replace(summary, &edited)).unwrap();
    let out = pegsim(d, &["replay", "--log", "bad.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("M mismatch"));
}

#[test]
fn replay_refuses_a_different_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pegsim(d, &["train", "--seed", "1", "--episodes", "2", "--log", "a.tsv", "--checkpoint", "a.ck"]);
    pegsim(d, &["train", "--seed", "2", "--episodes", "2", "--log", "b.tsv", "--checkpoint", "b.ck"]);
    let out = pegsim(d, &["trial", "--mode", "semi", "--seed", "1", "--checkpoint", "a.ck", "--log", "s.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pegsim(d, &["replay", "--log", "s.jsonl"]).status.success());
    let out = pegsim(d, &["replay", "--log", "s.jsonl", "--checkpoint", "b.ck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn semi_trial_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!pegsim(dir.path(), &["trial", "--mode", "semi"]).status.success());
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), "[train]\nmax_episodes = 2\n\n[env]\nmax_steps = 5\n").unwrap();
    let out = pegsim(d, &["--config", "c.toml", "train", "--seed", "3", "--log", "l.tsv", "--checkpoint", "c.ck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(d.join("l.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().skip(1).all(|l| l.split('\t').nth(3).unwrap().parse::<u64>().unwrap() <= 5));

    fs::write(d.join("bad.toml"), "[train]\nnot_a_field = 1\n").unwrap();
    assert!(!pegsim(d, &["--config", "bad.toml", "train", "--seed", "1"]).status.success());
}

#[test]
fn compare_prints_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pegsim(d, &["train", "--seed", "1", "--episodes", "2", "--log", "a.tsv", "--checkpoint", "a.ck"]);
    let out = pegsim(d, &["compare", "--checkpoint", "a.ck", "--trials", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for key in ["manual.M_mm", "manual.T_s", "semi.M_mm", "semi.T_s", "reduction.M_pct", "reduction.T_pct"] {
        value(&text, key).parse::<f64>().unwrap();
    }
}
