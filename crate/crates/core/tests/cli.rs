use std::process::{Command, Output};

use dndarray::cli::BenchReport;

fn dnd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnd"))
        .args(args)
        .env_remove("DND_RANKS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(args: &[&str]) -> BenchReport {
    let o = dnd(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(stdout(&o).trim()).unwrap()
}

#[test]
fn bench_kmeans_reports_parameters() {
    let r = report(&[
        "bench", "kmeans", "--synthetic", "600x8", "--k", "8", "--iters", "30", "--ranks", "2", "--runs", "2",
    ]);
    assert_eq!(r.algo, dndarray::cli::Algo::Kmeans);
    assert_eq!(r.ranks, 2);
    assert_eq!(r.params["k"], 8);
    assert_eq!(r.params["iters"], 30);
    assert_eq!((r.warmup_runs, r.timed_runs, r.times_seconds.len()), (1, 2, 2));
}

#[test]
fn bench_cdist_on_a_tiny_input() {
    let r = report(&["bench", "cdist", "--synthetic", "1x5", "--ranks", "3", "--runs", "1", "--warmup", "0"]);
    assert_eq!(r.times_seconds.len(), 1);
    assert_eq!(r.std_seconds, 0.0);
}

#[test]
fn bench_honours_rank_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_dnd"))
        .args(["bench", "moments", "--synthetic", "10x3", "--runs", "1"])
        .env("DND_RANKS", "3")
        .output()
        .unwrap();
    let r: BenchReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.ranks, 3);
}

#[test]
fn verify_passes_on_healthy_builds() {
    for args in [
        &["verify", "moments", "--synthetic", "100x18", "--ranks", "3"][..],
        &["verify", "moments", "--synthetic", "100x18", "--ranks", "4", "--split", "1", "--axis", "0", "--ddof", "1"],
        &["verify", "lasso", "--synthetic", "200x6", "--lambda", "0", "--ranks", "2", "--iters", "200"],
        &["verify", "kmeans", "--synthetic", "120x4", "--k", "3", "--ranks", "3"],
        &["verify", "cdist", "--synthetic", "40x3", "--ranks", "4"],
    ] {
        let o = dnd(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("PASS"));
    }
}

#[test]
fn injected_fault_is_detected() {
    let o = dnd(&["verify", "moments", "--synthetic", "100x18", "--ranks", "3", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn bad_input_exits_with_an_error() {
    let o = dnd(&["bench", "kmeans", "--synthetic", "5x2", "--k", "9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let o = dnd(&["bench", "moments", "--data", "/nonexistent.dnb"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dnd(&["bench", "nope"]).status.success());
}

#[test]
fn convert_then_bench_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let dnb = dir.path().join("d.dnb");
    let rows: String = (0..30).map(|i| format!("{},{},{}\n", i, (i * 7) % 5, i % 3)).collect();
    std::fs::write(&csv, format!("x,y,z\n{rows}")).unwrap();
    let o = dnd(&["convert", csv.to_str().unwrap(), dnb.to_str().unwrap(), "--header", "--dtype", "f32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&["bench", "moments", "--data", dnb.to_str().unwrap(), "--ranks", "2", "--runs", "1"]);
    assert_eq!(r.params["rows"], 30);
    let o = dnd(&["verify", "lasso", "--data", dnb.to_str().unwrap(), "--ranks", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}
