use std::path::Path;
use std::process::{Command, Output};

fn twinsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinsched")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = twinsched(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn forecast_requires_an_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinsched(&["forecast", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forecast_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "forecast",
        "--out",
        s(dir.path()),
        "--generator",
        "synthetic",
        "--set",
        "clients=2",
        "--set",
        "rounds=3",
        "--set",
        "local_epochs=3",
    ]);
    assert_eq!(csv_rows(&dir.path().join("rounds.csv")).len(), 3);
    let ckpt = read(&dir.path().join("checkpoint.json"));
    assert!(ckpt.contains("\"format\":\"twinsched-lstm\""));
    assert!(read(&dir.path().join("config.txt")).contains("rounds = 3\n"));
}

#[test]
fn simifed_no_worse_than_fed_on_the_pair_scenario() {
    let mse = |mode: &str| {
        let dir = tempfile::tempdir().unwrap();
        ok(&["forecast", "--out", s(dir.path()), "--generator", "pair-outlier", "--mode", mode, "--seed", "3"]);
        let rows = csv_rows(&dir.path().join("rounds.csv"));
        rows.last().unwrap()[6].parse::<f64>().unwrap()
    };
    let (simi, fed) = (mse("simifed"), mse("fed"));
    assert!(simi <= fed, "simifed {simi} > fed {fed}");
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = twinsched(&["simulate", "--out", s(dir.path()), "--set", "nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "sizes = 10\nalso_nope = 2\n").unwrap();
    let out = twinsched(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = twinsched(&["simulate", "--out", s(dir.path()), "--set", "tick_min=7", "--horizons", "50"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["simulate", "--out", s(d.path()), "--seed", "7", "--sizes", "10", "--horizons", "100"]);
    }
    for f in ["metrics_simifed.csv", "events_simifed.jsonl", "forecast_rounds.csv", "loss.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let settings = |d: &Path| -> Vec<String> { read(&d.join("config.txt")).lines().filter(|l| !l.starts_with("out =")).map(String::from).collect() };
    assert_eq!(settings(a.path()), settings(b.path()));
    // The archived config reproduces the run.
    let c = tempfile::tempdir().unwrap();
    let cfg = a.path().join("config.txt");
    ok(&["simulate", "--config", s(&cfg), "--out", s(c.path())]);
    assert_eq!(read(&a.path().join("metrics_simifed.csv")), read(&c.path().join("metrics_simifed.csv")));
}

#[test]
fn comparison_has_one_series_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", s(dir.path()), "--modes", "simifed,fed,none", "--sizes", "10", "--horizons", "50"]);
    let rows = csv_rows(&dir.path().join("comparison.csv"));
    let modes: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(modes.len(), 3);
    for m in ["simifed", "fed", "none"] {
        assert!(dir.path().join(format!("metrics_{m}.csv")).is_file());
    }
}

#[test]
fn default_grid_has_twenty_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", s(dir.path()), "--modes", "none"]);
    let rows = csv_rows(&dir.path().join("metrics_none.csv"));
    assert_eq!(rows.len(), 24);
    for r in &rows {
        let f: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!((f[5] + f[6] - 100.0).abs() <= 0.01);
        assert!((f[10] + f[11] - 100.0).abs() <= 0.01);
    }
}

#[test]
fn mine_sweep_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--out",
        s(&sim),
        "--modes",
        "none",
        "--sizes",
        "20",
        "--horizons",
        "200",
        "--set",
        "write_tdtdb=true",
    ]);
    let db = sim.join("tdtdb/none_n20_t200.jsonl");
    let out = dir.path().join("mine");
    ok(&["mine", "--out", s(&out), "--tdtdb", s(&db)]);
    let reports = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("patterns_minsup_"))
        .count();
    assert_eq!(reports, 5);
    let counts: Vec<usize> = csv_rows(&out.join("mining_metrics.csv")).iter().map(|r| r[7].parse().unwrap()).collect();
    assert_eq!(counts.len(), 5);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let eout = dir.path().join("mine_empty");
    ok(&["mine", "--out", s(&eout), "--tdtdb", s(&empty)]);
    for r in csv_rows(&eout.join("mining_metrics.csv")) {
        assert_eq!(r[7], "0");
    }

    let missing = twinsched(&["mine", "--out", s(&eout), "--tdtdb", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(missing.status.code(), Some(3));
    let corrupt = dir.path().join("corrupt.jsonl");
    std::fs::write(&corrupt, "{not json\n").unwrap();
    let bad = twinsched(&["mine", "--out", s(&eout), "--tdtdb", s(&corrupt)]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn report_copies_metrics_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", s(dir.path()), "--modes", "simifed,none", "--sizes", "10", "--horizons", "50,100"]);
    ok(&["report", s(dir.path())]);
    let md = read(&dir.path().join("summary.md"));
    let rows = csv_rows(&dir.path().join("metrics_simifed.csv"));
    let last = rows.iter().find(|r| r[0] == "10" && r[1] == "100").unwrap();
    assert!(md.contains(&format!("AV {}%", last[4])), "{md}");
    assert!(md.contains("simifed vs none"));

    let empty = tempfile::tempdir().unwrap();
    let out = twinsched(&["report", s(empty.path())]);
    assert_ne!(out.status.code(), Some(0));
    std::fs::write(empty.path().join("config.txt"), "seed = 1\n").unwrap();
    let out = twinsched(&["report", s(empty.path())]);
    assert_eq!(out.status.code(), Some(3));
}
