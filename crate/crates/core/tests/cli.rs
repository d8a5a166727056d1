mod common;

use std::path::{Path, PathBuf};

use common::{fixture, TestServer, MODEL};
use policyx::cli::{run_with, EXIT_DEGRADED, EXIT_FATAL, EXIT_OK};
use policyx::corpus::{write_csv, Corpus};
use policyx::evaluation::parse_json_report;
use policyx::extraction::{manifest_path, RunManifest};
use policyx::gateway::MockScript;
use serde_json::json;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn policyx(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(
        std::iter::once("policyx").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn extract_mock(dir: &Path, method: &str, script: &Path) -> Run {
    let corpus = fixture("corpus.csv");
    policyx(&[
        "extract",
        "--corpus",
        s(&corpus),
        "--method",
        method,
        "--backend",
        "mock",
        "--mock-script",
        s(script),
        "--output-dir",
        s(dir),
        "--model",
        MODEL,
    ])
}

fn write_script(dir: &Path, script: &MockScript) -> PathBuf {
    let path = dir.join("script.json");
    std::fs::write(&path, serde_json::to_string(script).unwrap()).unwrap();
    path
}

#[test]
fn role_based_mock_run_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let run = extract_mock(dir.path(), "role-based", &fixture("mock_role_based.json"));
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);
    let journal = dir.path().join("RoleBased.jsonl");
    assert_eq!(lines(&journal), 12);
    let manifest = RunManifest::read(&manifest_path(&journal)).unwrap();
    assert_eq!(
        (manifest.records, manifest.completed, manifest.degraded),
        (12, 12, 0)
    );
    assert_eq!(manifest.model_id, MODEL);
    assert_eq!(manifest.backend, "mock");
    assert_eq!(manifest.template_digests.len(), 6);
}

#[test]
fn prose_only_response_degrades_but_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = common::role_script();
    script.insert(
        "p-009/FoodExpert",
        "These stages cannot be determined from the summary.",
    );
    let path = write_script(dir.path(), &script);
    let run = extract_mock(dir.path(), "role-based", &path);
    assert_eq!(run.code, EXIT_DEGRADED);
    assert!(run.stderr.contains("p-009"), "{}", run.stderr);
    assert_eq!(lines(&dir.path().join("RoleBased.jsonl")), 12);
}

#[test]
fn replay_with_cold_cache_fails_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.csv");
    let cache = dir.path().join("cache");
    let run = policyx(&[
        "extract",
        "--corpus",
        s(&corpus),
        "--method",
        "zero-shot",
        "--backend",
        "replay",
        "--cache-dir",
        s(&cache),
        "--output-dir",
        s(dir.path()),
        "--model",
        MODEL,
    ]);
    assert_eq!(run.code, EXIT_FATAL);
    let line = run.stderr.lines().next().unwrap();
    assert!(line.contains("no cached response for key"), "{line}");
    assert!(line.contains("p-001/ZeroShot"), "{line}");
    assert_eq!(lines(&dir.path().join("ZeroShot.jsonl")), 0);
}

#[test]
fn fatal_error_keeps_partial_journal() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = common::role_script();
    script.0.remove("p-005/PolicyAnalyst");
    let path = write_script(dir.path(), &script);
    let corpus = fixture("corpus.csv");
    let run = policyx(&[
        "extract",
        "--corpus",
        s(&corpus),
        "--method",
        "role-based",
        "--backend",
        "mock",
        "--mock-script",
        s(&path),
        "--output-dir",
        s(dir.path()),
        "--sequential",
        "true",
        "--concurrency",
        "1",
    ]);
    assert_eq!(run.code, EXIT_FATAL);
    assert!(run.stderr.contains("p-005"));
    assert_eq!(lines(&dir.path().join("RoleBased.jsonl")), 4);
}

#[test]
fn config_file_supplies_options_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        json!({
            "corpus": fixture("corpus.jsonl"),
            "method": "few-shot",
            "backend": "mock",
            "mock_script": fixture("mock_baselines.json"),
            "exemplar_k": 4,
            "seed": 3,
            "output_dir": dir.path().join("from-file"),
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("from-flag");
    let run = policyx(&[
        "extract",
        "--config",
        s(&config),
        "--exemplar-k",
        "3",
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);
    let manifest = RunManifest::read(&out.join("FewShot.manifest.json")).unwrap();
    assert_eq!(manifest.exemplar_ids.len(), 3);
    assert_eq!(manifest.records, 9);
    assert!(!dir.path().join("from-file").exists());
}

#[test]
fn evaluate_mixed_fixture_matches_committed_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = policyx(&[
        "evaluate",
        s(&fixture("eval/journal_mixed.jsonl")),
        "--corpus",
        s(&fixture("eval/corpus_mixed.csv")),
        "--model",
        MODEL,
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);
    for ext in ["md", "csv", "json"] {
        let got = std::fs::read(dir.path().join(format!("report.{ext}"))).unwrap();
        let want = std::fs::read(fixture(&format!("eval/expected_report.{ext}"))).unwrap();
        assert_eq!(got, want, "report.{ext}");
    }
    assert_eq!(
        run.stdout,
        std::fs::read_to_string(fixture("eval/expected_report.md")).unwrap()
    );
}

#[test]
fn evaluate_perfect_journal_scores_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::corpus();
    let mut script = MockScript::default();
    for r in corpus.records() {
        let g = r.gold.as_ref().unwrap();
        let mut strategies = g.strategies.iter().map(|s| s.display());
        script.insert(
            format!("{}/PolicyAnalyst", r.id),
            json!({"state": g.state.as_str(), "effect_year": g.effect_year.get(), "policy_type": g.policy_type.display()})
                .to_string(),
        );
        script.insert(
            format!("{}/LegalStrategist", r.id),
            json!({"strategy_1": strategies.next().unwrap_or(""), "strategy_2": strategies.next().unwrap_or("")})
                .to_string(),
        );
        script.insert(
            format!("{}/FoodExpert", r.id),
            serde_json::to_string(&g.food).unwrap(),
        );
    }
    let path = write_script(dir.path(), &script);
    assert_eq!(extract_mock(dir.path(), "role-based", &path).code, EXIT_OK);
    let run = policyx(&[
        "evaluate",
        s(&dir.path().join("RoleBased.jsonl")),
        "--corpus",
        s(&fixture("corpus.csv")),
    ]);
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);
    let report =
        &parse_json_report(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap()[0];
    assert_eq!(report.model_id, MODEL);
    assert_eq!(report.attributes.state_acc, 1.0);
    assert_eq!(report.strategies.exact_acc, 1.0);
    assert_eq!(report.strategies.group_b_acc, 1.0);
    assert_eq!(report.food.micro_f1, 1.0);
    assert_eq!(report.food.hamming_loss, 0.0);
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| Role-Based | fixture-model | 12 | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 | 0 | 0 |"));
    assert!(
        md.contains("| 100.00 | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 | 1.0000 | 0.0000 |")
    );
    assert!(md.contains("| Role-Based | fixture-model | 100.00 | 0.00 |"));
}

#[test]
fn evaluate_rejects_records_without_gold() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("j.jsonl");
    let mut text = std::fs::read_to_string(fixture("eval/journal_mixed.jsonl")).unwrap();
    text = text
        .replace("\"m-2\"", "\"m-99\"")
        .replace("\"m-4\"", "\"m-42\"");
    std::fs::write(&journal, text).unwrap();
    let run = policyx(&[
        "evaluate",
        s(&journal),
        "--corpus",
        s(&fixture("eval/corpus_mixed.csv")),
    ]);
    assert_eq!(run.code, EXIT_FATAL);
    assert!(run.stderr.contains("m-99, m-42"), "{}", run.stderr);
    assert!(!dir.path().join("report.md").exists());
}

#[test]
fn compare_builds_multi_row_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        extract_mock(dir.path(), "role-based", &fixture("mock_role_based.json")).code,
        EXIT_OK
    );
    assert_eq!(
        extract_mock(dir.path(), "zero-shot", &fixture("mock_baselines.json")).code,
        EXIT_DEGRADED
    );
    let role = dir.path().join("RoleBased.jsonl");
    let zero = dir.path().join("ZeroShot.jsonl");
    let out = dir.path().join("cmp");
    // argument order does not affect row order
    let run = policyx(&[
        "compare",
        s(&zero),
        s(&role),
        "--corpus",
        s(&fixture("corpus.csv")),
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(md.matches("| Role-Based |").count(), 3);
    assert_eq!(md.matches("| Zero-Shot |").count(), 3);
    assert!(md.find("| Role-Based |").unwrap() < md.find("| Zero-Shot |").unwrap());
    assert_eq!(
        parse_json_report(&std::fs::read_to_string(out.join("report.json")).unwrap())
            .unwrap()
            .len(),
        2
    );

    let twice = policyx(&[
        "compare",
        s(&role),
        s(&role),
        "--corpus",
        s(&fixture("corpus.csv")),
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(twice.code, EXIT_OK);
    let reports =
        parse_json_report(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn compare_refuses_mixed_corpora() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        extract_mock(dir.path(), "role-based", &fixture("mock_role_based.json")).code,
        EXIT_OK
    );

    // same records minus the last one
    let corpus = common::corpus();
    let smaller = Corpus::new(corpus.records()[..11].to_vec()).unwrap();
    let small_path = dir.path().join("small.csv");
    write_csv(&smaller, std::fs::File::create(&small_path).unwrap()).unwrap();
    let other = dir.path().join("other");
    let run = policyx(&[
        "extract",
        "--corpus",
        s(&small_path),
        "--method",
        "cot",
        "--backend",
        "mock",
        "--mock-script",
        s(&fixture("mock_baselines.json")),
        "--output-dir",
        s(&other),
    ]);
    assert_eq!(run.code, EXIT_OK, "{}", run.stderr);

    let run = policyx(&[
        "compare",
        s(&dir.path().join("RoleBased.jsonl")),
        s(&other.join("ChainOfThought.jsonl")),
        "--corpus",
        s(&fixture("corpus.csv")),
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(run.code, EXIT_FATAL);
    assert!(run.stderr.contains("different corpora"), "{}", run.stderr);
}

#[test]
fn http_run_fills_cache_then_replays_offline() {
    std::env::set_var(policyx::gateway::API_KEY_ENV, "test-key");
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::corpus();
    let server = TestServer::answering(common::baseline_answers(
        &corpus,
        policyx::prompting::MethodId::ZeroShot,
        &common::baseline_script(),
    ));
    let cache = dir.path().join("cache");
    let args = |backend: &'static str, out: &Path| {
        vec![
            "extract".to_string(),
            "--corpus".into(),
            s(&fixture("corpus.csv")).into(),
            "--method".into(),
            "zero-shot".into(),
            "--backend".into(),
            backend.into(),
            "--base-url".into(),
            server.base_url.clone(),
            "--cache-dir".into(),
            s(&cache).into(),
            "--output-dir".into(),
            s(out).into(),
            "--model".into(),
            MODEL.into(),
        ]
    };
    let live = dir.path().join("live");
    let a = args("http", &live);
    let run = policyx(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run.code, EXIT_DEGRADED, "{}", run.stderr);
    assert_eq!(server.hits(), 12);

    let replay = dir.path().join("replay");
    let b = args("replay", &replay);
    assert_eq!(
        policyx(&b.iter().map(String::as_str).collect::<Vec<_>>()).code,
        EXIT_DEGRADED
    );
    assert_eq!(server.hits(), 12);
    assert_eq!(
        std::fs::read(live.join("ZeroShot.jsonl")).unwrap(),
        std::fs::read(replay.join("ZeroShot.jsonl")).unwrap()
    );

    let stats = policyx(&["cache", "stats", "--cache-dir", s(&cache)]);
    assert!(stats.stdout.contains("entries: 12"), "{}", stats.stdout);
    assert!(stats.stdout.contains(&format!("model {MODEL}: 12")));
    assert_eq!(
        policyx(&["cache", "prune", "--cache-dir", s(&cache)]).code,
        EXIT_FATAL
    );
    let kept = policyx(&[
        "cache",
        "prune",
        "--cache-dir",
        s(&cache),
        "--older-than",
        "1d",
    ]);
    assert_eq!(kept.stdout.trim(), "removed 0, kept 12");
    let all = policyx(&["cache", "prune", "--cache-dir", s(&cache), "--all"]);
    assert_eq!(all.stdout.trim(), "removed 12, kept 0");
}

#[test]
fn usage_errors_are_fatal_and_help_is_not() {
    assert_eq!(
        policyx(&["extract", "--method", "five-shot"]).code,
        EXIT_FATAL
    );
    assert_eq!(
        policyx(&["extract", "--method", "zero-shot"]).code,
        EXIT_FATAL
    );
    let help = policyx(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    for cmd in ["extract", "evaluate", "compare", "cache"] {
        assert!(help.stdout.contains(cmd));
    }
}
