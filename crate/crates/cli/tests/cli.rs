//! End-to-end checks of the `manipfail` binary: the full generate -> stats
//! -> evaluate -> loop -> render flow, exit codes, and integrity refusal.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manipfail"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("manipfail-cli-{tag}-{}", std::process::id()));
    fs::remove_dir_all(&dir).ok();
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn generate(dir: &Path, seed: u64) -> Output {
    run(bin().args([
        "generate",
        "--seed",
        &seed.to_string(),
        "--tasks",
        "PickCube,PushCube,SpinStack",
        "--failures-per-task",
        "3",
        "--successes-per-task",
        "1",
        "--out",
        dir.to_str().unwrap(),
        "--concurrency",
        "2",
    ]))
}

fn oracle_answers(dataset: &Path, answers: &Path) {
    let corpus = fs::read_to_string(dataset.join("qa/corpus.jsonl")).unwrap();
    let mut out = String::new();
    for line in corpus.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        out.push_str(
            &serde_json::json!({
                "id": v["id"],
                "answer": v["reference_answer"],
            })
            .to_string(),
        );
        out.push('\n');
    }
    fs::write(answers, out).unwrap();
}

#[test]
fn generate_stats_evaluate_round_trip() {
    let base = workdir("roundtrip");
    let ds = base.join("ds");
    let out = generate(&ds, 31);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ds.join("manifest.json").exists());
    assert!(ds.join("qa/corpus.jsonl").exists());

    let out = run(bin().args([
        "stats",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        base.join("stats").to_str().unwrap(),
        "--plots",
    ]));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("trajectories: 12"));
    assert!(base.join("stats/duration_histogram.svg").exists());

    let answers = base.join("answers.jsonl");
    oracle_answers(&ds, &answers);
    let out = run(bin().args([
        "evaluate",
        "--corpus",
        ds.join("qa/corpus.jsonl").to_str().unwrap(),
        "--answers",
        answers.to_str().unwrap(),
        "--mock-judge",
        "--out",
        base.join("report.json").to_str().unwrap(),
    ]));
    assert!(out.status.success(), "oracle answers must score cleanly");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(base.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overall_average"].as_f64().unwrap(), 100.0);
    assert_eq!(report["items_unscored"].as_u64().unwrap(), 0);

    fs::remove_dir_all(&base).ok();
}

#[test]
fn generation_is_byte_deterministic_across_invocations() {
    let base = workdir("determinism");
    let a = base.join("a");
    let b = base.join("b");
    assert!(generate(&a, 77).status.success());
    assert!(generate(&b, 77).status.success());
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("qa/corpus.jsonl")).unwrap(),
        fs::read(b.join("qa/corpus.jsonl")).unwrap()
    );
    fs::remove_dir_all(&base).ok();
}

#[test]
fn tampered_dataset_is_refused_with_exit_2() {
    let base = workdir("integrity");
    let ds = base.join("ds");
    assert!(generate(&ds, 5).status.success());
    // Silently modify one trajectory file.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    let victim = manifest["entries"][0]["path"].as_str().unwrap();
    let path = ds.join(victim);
    let mut bytes = fs::read(&path).unwrap();
    bytes.extend_from_slice(b"\n");
    fs::write(&path, bytes).unwrap();

    let out = run(bin().args(["stats", "--dataset", ds.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&base).ok();
}

#[test]
fn missing_judge_for_open_ended_items_fails_fast_with_exit_1() {
    let base = workdir("failfast");
    let ds = base.join("ds");
    assert!(generate(&ds, 8).status.success());
    let answers = base.join("answers.jsonl");
    oracle_answers(&ds, &answers);
    let out = run(bin().args([
        "evaluate",
        "--corpus",
        ds.join("qa/corpus.jsonl").to_str().unwrap(),
        "--answers",
        answers.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("judge"),
        "fail-fast message names the judge: {err}"
    );
    fs::remove_dir_all(&base).ok();
}

#[test]
fn missing_answers_score_as_unscored_with_exit_3() {
    let base = workdir("partial");
    let ds = base.join("ds");
    assert!(generate(&ds, 9).status.success());
    // Answer only the first half of the items.
    let corpus = fs::read_to_string(ds.join("qa/corpus.jsonl")).unwrap();
    let lines: Vec<&str> = corpus.lines().collect();
    let mut out_lines = String::new();
    for line in lines.iter().take(lines.len() / 2) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        out_lines.push_str(
            &serde_json::json!({"id": v["id"], "answer": v["reference_answer"]}).to_string(),
        );
        out_lines.push('\n');
    }
    let answers = base.join("answers.jsonl");
    fs::write(&answers, out_lines).unwrap();

    let out = run(bin().args([
        "evaluate",
        "--corpus",
        ds.join("qa/corpus.jsonl").to_str().unwrap(),
        "--answers",
        answers.to_str().unwrap(),
        "--mock-judge",
    ]));
    assert_eq!(out.status.code(), Some(3));
    fs::remove_dir_all(&base).ok();
}

#[test]
fn malformed_answer_lines_reject_the_run() {
    let base = workdir("malformed");
    let ds = base.join("ds");
    assert!(generate(&ds, 3).status.success());
    let answers = base.join("answers.jsonl");
    fs::write(
        &answers,
        "{\"id\": \"x\", \"answer\": \"y\"}\nnot json at all\n",
    )
    .unwrap();
    let out = run(bin().args([
        "evaluate",
        "--corpus",
        ds.join("qa/corpus.jsonl").to_str().unwrap(),
        "--answers",
        answers.to_str().unwrap(),
        "--mock-judge",
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 2"),
        "diagnostics name the offending line: {err}"
    );
    fs::remove_dir_all(&base).ok();
}

#[test]
fn unknown_taxonomy_filter_is_a_configuration_error() {
    let base = workdir("badtax");
    let out = run(bin().args([
        "generate",
        "--seed",
        "1",
        "--taxonomy",
        "gremlins",
        "--out",
        base.join("ds").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
    fs::remove_dir_all(&base).ok();
}

#[test]
fn inapplicable_taxonomy_filter_surfaces_the_injector_error() {
    let base = workdir("na");
    // Grasping errors need a grasp substage; PushCube has none.
    let out = run(bin().args([
        "generate",
        "--seed",
        "1",
        "--tasks",
        "PushCube",
        "--taxonomy",
        "grasping_error",
        "--failures-per-task",
        "1",
        "--successes-per-task",
        "0",
        "--out",
        base.join("ds").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not applicable"), "{err}");
    fs::remove_dir_all(&base).ok();
}

#[test]
fn loop_emits_rate_table_and_session_log() {
    let base = workdir("loop");
    let table_path = base.join("rates.json");
    let out = run(bin().args([
        "loop",
        "--seed",
        "4",
        "--tasks",
        "PickCube",
        "--episodes-per-task",
        "2",
        "--critics",
        "null,oracle-low",
        "--out",
        table_path.to_str().unwrap(),
    ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&table_path).unwrap()).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);
    let sessions = fs::read_to_string(base.join("rates.sessions.jsonl")).unwrap();
    assert_eq!(sessions.lines().count(), 2 * 2);
    // Expert policy scores 1.0 everywhere.
    let out = run(bin().args([
        "loop",
        "--seed",
        "4",
        "--tasks",
        "PickCube",
        "--episodes-per-task",
        "1",
        "--critics",
        "null",
        "--policy",
        "expert",
    ]));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("average=1.0000"));
    fs::remove_dir_all(&base).ok();
}

#[test]
fn render_emits_svg_for_a_stored_trajectory() {
    let base = workdir("render");
    let ds = base.join("ds");
    assert!(generate(&ds, 6).status.success());
    let traj = fs::read_dir(ds.join("trajectories"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let svg = base.join("episode.svg");
    let out = run(bin().args([
        "render",
        "--trajectory",
        traj.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]));
    assert!(out.status.success());
    let contents = fs::read_to_string(&svg).unwrap();
    assert!(contents.starts_with("<svg"));
    assert!(contents.contains("<path"));
    fs::remove_dir_all(&base).ok();
}
