use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dagbft_core::fixtures;
use dagbft_core::simnet::trace::Trace;

fn repo_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn dagbft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagbft")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn dot_counts(dot: &str) -> (usize, usize) {
    (dot.lines().filter(|l| l.contains("[label=")).count(), dot.lines().filter(|l| l.contains("->")).count())
}

/// Checked-in traces must match what the fixtures produce today. Set
/// `DAGBFT_BLESS=1` to rewrite them.
#[test]
fn fixture_traces_are_current() {
    let traces: [(&str, Trace); 4] = [
        ("join.trace.jsonl", fixtures::interpretation_trace(&fixtures::join())),
        ("fork.trace.jsonl", fixtures::interpretation_trace(&fixtures::fork())),
        ("duplicate-delivery.trace.jsonl", fixtures::duplicate_delivery_trace()),
        ("unauthentic.trace.jsonl", fixtures::unauthentic_trace()),
    ];
    let bless = std::env::var_os("DAGBFT_BLESS").is_some();
    for (name, trace) in traces {
        let path = repo_fixture(name);
        let want = trace.to_jsonl();
        if bless {
            fs::write(&path, &want).unwrap();
        }
        let got = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(got, want, "{name} is stale; rerun with DAGBFT_BLESS=1");
    }
}

#[test]
fn run_broadcast_materializes_four_echoes_in_the_first_block() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("broadcast.jsonl");
    let o = dagbft(&["run", "--scenario", path_str(&repo_fixture("broadcast.json")), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("blocks"));
    let trace = Trace::from_jsonl(&fs::read_to_string(&out).unwrap()).unwrap();
    let echo = dagbft_core::brb::BrbMessage::Echo(42).encode();
    let first = trace.events.iter().find_map(|e| match e {
        dagbft_core::simnet::trace::TraceEvent::Interpret { builder, k: 0, labels, .. } if builder.0 == 0 => {
            Some(labels.clone())
        }
        _ => None,
    });
    let labels = first.expect("s0's first block is interpreted");
    assert_eq!(labels.len(), 1);
    assert_eq!(labels[0].outbox.len(), 4);
    assert!(labels[0].outbox.iter().all(|m| m.payload == echo && m.sender.0 == 0));

    let snap = dir.path().join("broadcast.s1.step6.dot");
    assert!(snap.exists(), "snapshot DOT missing");
    assert!(dir.path().join("broadcast.s1.final.dot").exists());

    let o = dagbft(&["check", "--trace", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let fixture = repo_fixture("broadcast.json");
    for out in [&a, &b] {
        let o = dagbft(&["run", "--scenario", path_str(&fixture), "--out", path_str(out), "--seed", "7"]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bad_quorum_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    let o = dagbft(&["run", "--scenario", path_str(&repo_fixture("bad-quorum.json")), "--out", path_str(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("3f + 1"));
    assert!(!out.exists());
}

#[test]
fn negative_fixtures_fail_with_one_named_violation() {
    for (name, property) in [("duplicate-delivery.trace.jsonl", "no_duplication"), ("unauthentic.trace.jsonl", "authenticity")] {
        let o = dagbft(&["check", "--trace", path_str(&repo_fixture(name)), "--props", "ppl"]);
        assert_eq!(code(&o), 1, "{name}");
        let text = stdout(&o);
        assert!(text.contains("violations 1"), "{text}");
        assert_eq!(text.matches(&format!("  {property}:")).count(), 1, "{text}");
    }
}

#[test]
fn empty_trace_is_vacuous() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = dagbft(&["check", "--trace", path_str(&empty)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("vacuous"));
}

#[test]
fn malformed_trace_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(repo_fixture("join.trace.jsonl")).unwrap();
    text.push_str("{\"kind\": \"NOPE\"}\n");
    let line = text.lines().count();
    fs::write(&bad, text).unwrap();
    let o = dagbft(&["check", "--trace", path_str(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("line {line}")));
}

#[test]
fn missing_files_are_io_errors() {
    let o = dagbft(&["census", "--trace", "/nonexistent/trace.jsonl"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn unknown_property_and_bad_flags_are_usage_errors() {
    let o = dagbft(&["check", "--trace", path_str(&repo_fixture("join.trace.jsonl")), "--props", "bogus"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&dagbft(&["run"])), 2);
}

#[test]
fn export_dot_counts_nodes_and_edges_stably() {
    let dir = tempfile::tempdir().unwrap();
    for (name, want) in [("join.trace.jsonl", (3, 2)), ("fork.trace.jsonl", (4, 4))] {
        let (a, b) = (dir.path().join("a.dot"), dir.path().join("b.dot"));
        for out in [&a, &b] {
            let o = dagbft(&["export-dot", "--trace", path_str(&repo_fixture(name)), "--out", path_str(out)]);
            assert_eq!(code(&o), 0);
        }
        let dot = fs::read_to_string(&a).unwrap();
        assert_eq!(dot_counts(&dot), want, "{name}");
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}

#[test]
fn census_shows_no_protocol_messages_on_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    assert_eq!(code(&dagbft(&["run", "--scenario", path_str(&repo_fixture("broadcast.json")), "--out", path_str(&out)])), 0);
    let o = dagbft(&["census", "--trace", path_str(&out)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("protocol messages on wire: 0"), "{text}");
    assert!(text.contains("FWD envelopes: 0"), "{text}");
}

#[test]
fn sweep_writes_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagbft(&[
        "run",
        "--scenario",
        path_str(&repo_fixture("broadcast.json")),
        "--out",
        path_str(dir.path()),
        "--seed",
        "100",
        "--sweep",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    for seed in 100..103 {
        assert!(dir.path().join(format!("seed-{seed}.jsonl")).exists());
    }
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn byzantine_traces_read_back_and_check_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eq.jsonl");
    let o = dagbft(&["run", "--scenario", path_str(&repo_fixture("equivocate.json")), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = dagbft(&["check", "--trace", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("brb: ok"), "{}", stdout(&o));
}
