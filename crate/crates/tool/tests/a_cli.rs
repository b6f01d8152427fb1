//! Runs the built `lrinfer` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn lrinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrinfer")).args(args).output().expect("spawn lrinfer")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_marginal_of_repeated_symbol() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("fixture.json");
    let corpus = dir.path().join("c.txt");
    stdout(&lrinfer(&["fixture", "--out", s(&model)]));
    std::fs::write(&corpus, "1 1\n").unwrap();
    let out = stdout(&lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&corpus)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: f64 = lines[0].parse().unwrap();
    assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-12, "{v}");
    assert!(lines[1].starts_with("total "));
}

#[test]
fn empty_corpus_totals_zero() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("fixture.json");
    let corpus = dir.path().join("c.txt");
    stdout(&lrinfer(&["fixture", "--out", s(&model)]));
    std::fs::write(&corpus, "\n\n").unwrap();
    let out = stdout(&lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&corpus)]));
    assert_eq!(out, "total 0.0\n");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("fixture.json");
    let corpus = dir.path().join("c.txt");
    stdout(&lrinfer(&["fixture", "--out", s(&model)]));

    let bad_model = dir.path().join("bad.json");
    std::fs::write(&bad_model, "{\"family\":\"hmm\"").unwrap();
    std::fs::write(&corpus, "0 1\n").unwrap();
    let o = lrinfer(&["marginal", "--model", s(&bad_model), "--corpus", s(&corpus)]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&corpus, "0 1\n0 x\n").unwrap();
    let o = lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&corpus)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    std::fs::write(&corpus, "0 1\n\n2 3 0\n").unwrap();
    let o = lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&corpus)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(o.stdout.is_empty());
}

#[test]
fn hsmm_frame_dimension_mismatch_names_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("h.json");
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    stdout(&lrinfer(&["synth", "--family", "hsmm", "--L", "8", "--seed", "1", "--out", s(&model)]));
    std::fs::write(frames.join("a.csv"), "0.5,1.5\n").unwrap();
    let o = lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&frames)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a.csv"));
}

#[test]
fn hsmm_sample_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("h.json");
    let frames = dir.path().join("frames");
    stdout(&lrinfer(&["synth", "--family", "hsmm", "--L", "8", "--seed", "1", "--out", s(&model)]));
    stdout(&lrinfer(&["sample", "--model", s(&model), "--T", "12", "--count", "3", "--seed", "2", "--out", s(&frames)]));
    let out = stdout(&lrinfer(&["marginal", "--model", s(&model), "--corpus", s(&frames)]));
    assert_eq!(out.lines().count(), 4);
    for l in out.lines().take(3) {
        assert!(l.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (family, backend) in [("hmm", "banded"), ("hsmm", "dense"), ("pcfg", "lowrank")] {
        let a = dir.path().join(format!("{family}-a.json"));
        let b = dir.path().join(format!("{family}-b.json"));
        let args = ["synth", "--family", family, "--backend", backend, "--L", "8", "--vocab", "6", "--seed", "5"];
        stdout(&lrinfer(&[&args[..], &["--out", s(&a)]].concat()));
        stdout(&lrinfer(&[&args[..], &["--out", s(&b)]].concat()));
        let first = std::fs::read(&a).unwrap();
        assert_eq!(first, std::fs::read(&b).unwrap());

        let corpus = dir.path().join("c.txt");
        std::fs::write(&corpus, "1 2 3\n").unwrap();
        if family != "hsmm" {
            let x = stdout(&lrinfer(&["marginal", "--model", s(&a), "--corpus", s(&corpus)]));
            assert!(x.starts_with('-'));
        }
    }
}

#[test]
fn seeded_commands_are_deterministic() {
    let runs: Vec<String> = (0..2)
        .map(|_| stdout(&lrinfer(&["expressivity", "--restarts", "3", "--iters", "20", "--seed", "9"])))
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].contains("three-state transition rank 2"));

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    let model = dir.path().join("fixture.json");
    stdout(&lrinfer(&["fixture", "--out", s(&model)]));
    let sampled = stdout(&lrinfer(&["sample", "--model", s(&model), "--T", "6", "--count", "20", "--seed", "1"]));
    assert_eq!(sampled, stdout(&lrinfer(&["sample", "--model", s(&model), "--T", "6", "--count", "20", "--seed", "1"])));
    std::fs::write(&corpus, &sampled).unwrap();
    let fits: Vec<String> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("fit{i}.json"));
            let log = stdout(&lrinfer(&[
                "fit", "--corpus", s(&corpus), "--states", "2", "--iters", "5", "--seed", "4", "--out", s(&out),
            ]));
            log + &std::fs::read_to_string(out).unwrap()
        })
        .collect();
    assert_eq!(fits[0], fits[1]);
}

#[test]
fn bench_writes_frontier_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    stdout(&lrinfer(&[
        "bench", "--family", "hmm", "--L", "16,32", "--ratio", "4", "--T", "4", "--batch", "2", "--repeats", "3",
        "--seed", "1", "--out", s(&csv),
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], lrinfer_core::bench::FRONTIER_HEADER);
    assert_eq!(lrinfer_core::bench::parse_frontier_csv(&text).unwrap().len(), 4);
}

#[test]
fn rank_of_fixture_and_low_rank_models() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture.json");
    let lr = dir.path().join("lr.json");
    stdout(&lrinfer(&["fixture", "--out", s(&fixture)]));
    stdout(&lrinfer(&["synth", "--family", "hmm", "--L", "32", "--rank", "4", "--seed", "2", "--out", s(&lr)]));
    let out = stdout(&lrinfer(&["rank", "--model", s(&fixture), "--model", s(&lr)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], lrinfer_core::bench::RANK_HEADER);
    assert_eq!(lines[1], "fixture,3,2,3");
    let fields: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(fields[0], "lr");
    assert!(fields[2].parse::<usize>().unwrap() <= 4);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let o = lrinfer(&["expressivity"]);
    assert!(!o.status.success());
}
