mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use common::*;
use echo_service::{App, ManualClock};

fn echo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echo"))
        .args(args)
        .env_remove("ECHO_DATA_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

const SMALL: &str = "[scenario]\nsessions = 150\nauthors = 20\nwarmup_sessions = 50\ncheckpoint_every = 50\nheldout_per_feature = 10\n";

fn small_run(tmp: &Path, name: &str) -> PathBuf {
    let scenario = tmp.join("scenario.toml");
    std::fs::write(&scenario, SMALL).unwrap();
    let out = tmp.join(name);
    let o = echo(&["run-sim", "--scenario", s(&scenario), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn run_sim_twice_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dir_contents(&small_run(tmp.path(), "a"));
    let b = dir_contents(&small_run(tmp.path(), "b"));
    let names: Vec<&String> = a.keys().collect();
    for f in ["ctr.csv", "events.jsonl", "summary.json", "learning_curves.csv", "engine.toml"] {
        assert!(a.contains_key(f), "{f} missing from {names:?}");
    }
    assert_eq!(a, b);
}

#[test]
fn replay_reproduces_ctr_and_checks_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = small_run(tmp.path(), "run");
    let log = out.join("events.jsonl");
    let o = echo(&["replay", "--log", s(&log), "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(o.stdout, std::fs::read(out.join("ctr.csv")).unwrap());

    let o = echo(&["replay", "--log", s(&log), "--seed", "7"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    std::fs::write(out.join("ctr.csv"), "group,impressions,clicks,ctr\n").unwrap();
    assert_eq!(code(&echo(&["replay", "--log", s(&log), "--seed", "42"])), 1);

    let o = echo(&["replay", "--log", s(&tmp.path().join("nothing/events.jsonl")), "--seed", "42"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn replay_works_on_a_server_data_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(START_MS);
    let (r, c, p) = inputs();
    let mut app = App::open(r, c, p, tmp.path(), Arc::new(clock.clone())).unwrap();
    let sid = app.create_session(None).unwrap().session_id;
    let reply = app.post_message(&sid, TASKABLE.into()).unwrap();
    clock.advance(1_000);
    app.post_click(&sid, &reply.recommendation.unwrap().impression_id).unwrap();
    drop(app);
    let o = echo(&["replay", "--log", s(&tmp.path().join("events.jsonl")), "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("group,impressions,clicks,ctr\n"), "{out}");
    assert!(out.contains("echo,1,1,"), "{out}");
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| l.split(',').map(String::from).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

#[test]
fn analyze_writes_table_shaped_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let records = fixtures().join("../annotation_records.jsonl");
    let cohen = tmp.path().join("cohen");
    let o = echo(&["analyze", "--records", s(&records), "--report", s(&cohen)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let (h, rows) = read_table(&cohen.join("agreement.csv"));
    assert_eq!(h, ["source", "author_accuracy", "kappa", "kl_divergence"]);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["expert", "llm", "mturk"]);
    let (h, rows) = read_table(&cohen.join("agreement_partition.csv"));
    assert_eq!(h.len(), 8);
    assert_eq!(rows.len(), 3);
    let (h, rows) = read_table(&cohen.join("consistency.csv"));
    assert_eq!(h, ["label_source", "predictor", "mean", "std", "runs", "evaluated", "skipped"]);
    assert_eq!(rows.len(), 5);
    let (h, _) = read_table(&cohen.join("in_conversation.csv"));
    assert_eq!(h, ["label_source", "in_conversation", "n", "accuracy"]);
    let (h, rows) = read_table(&cohen.join("cost.csv"));
    assert_eq!(h, ["method", "cost_per_datum", "seconds_per_datum", "hourly_rate"]);
    assert_eq!(rows.len(), 3);

    let fleiss = tmp.path().join("fleiss");
    let o = echo(&["analyze", "--records", s(&records), "--report", s(&fleiss), "--kappa", "fleiss"]);
    assert_eq!(code(&o), 0);
    let (_, a) = read_table(&cohen.join("agreement.csv"));
    let (_, b) = read_table(&fleiss.join("agreement.csv"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((&x[0], &x[1], &x[3]), (&y[0], &y[1], &y[3]));
    }
    assert_ne!(a, b, "kappa method had no effect");
    assert_eq!(std::fs::read(cohen.join("cost.csv")).unwrap(), std::fs::read(fleiss.join("cost.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "k = 2\nquestion_count = 4\n").unwrap();
    let o = echo(&["serve", "--config", s(&bad), "--port", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("question_count"));

    std::fs::write(&bad, "registry = \"missing.jsonl\"\n").unwrap();
    assert_eq!(code(&echo(&["serve", "--config", s(&bad), "--port", "0"])), 2);
    std::fs::write(&bad, "colour = 1\n").unwrap();
    assert_eq!(code(&echo(&["serve", "--config", s(&bad), "--port", "0"])), 2);
    assert_eq!(code(&echo(&["serve", "--config", s(&tmp.path().join("none.toml")), "--port", "0"])), 2);

    std::fs::write(&bad, "[scenario]\nmin_turns = 0\n").unwrap();
    assert_eq!(code(&echo(&["run-sim", "--scenario", s(&bad), "--out", s(tmp.path())])), 2);
    let records = tmp.path().join("records.jsonl");
    assert_eq!(code(&echo(&["analyze", "--records", s(&records), "--report", s(tmp.path())])), 2);
    let o = echo(&["analyze", "--records", s(&records), "--report", s(tmp.path()), "--kappa", "scott"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&echo(&["frobnicate"])), 2);
}

#[test]
fn serve_refuses_a_log_from_another_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(START_MS);
    let (r, c, p) = inputs();
    let mut app = App::open(r, c, p, &tmp.path().join("data"), Arc::new(clock)).unwrap();
    let sid = app.create_session(None).unwrap().session_id;
    app.post_message(&sid, TASKABLE.into()).unwrap();
    drop(app);
    let cfg = tmp.path().join("echo.toml");
    let fx = fixtures();
    std::fs::write(
        &cfg,
        format!(
            "registry = \"{}\"\ncatalog = \"{}\"\ndata_dir = \"data\"\nseed = 9\n",
            s(&fx.join("registry.jsonl")),
            s(&fx.join("catalog.jsonl"))
        ),
    )
    .unwrap();
    let o = echo(&["serve", "--config", s(&cfg), "--port", "0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
}
