use std::path::Path;
use std::process::{Command, Output};

use nascaps::genotype::{validate, Genotype};

const BIN: &str = env!("CARGO_BIN_EXE_nascaps");
const TRAINER: &str = env!("CARGO_BIN_EXE_nascaps-loopback-trainer");

fn nascaps(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NASCAPS_CACHE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn search_writes_log_and_front() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = nascaps(&[
        "search",
        "--dataset",
        "mnist",
        "--backend",
        "surrogate",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    let front = std::fs::read_to_string(out.join("front.jsonl")).unwrap();
    assert!(log.lines().count() >= 100);
    assert!(!front.is_empty());
    for line in front.lines() {
        assert!(log.contains(line), "front record missing from the run log");
    }
}

#[test]
fn search_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = nascaps(&[
            "search",
            "--seed",
            "11",
            "--generations",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out.join("run.jsonl")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn zero_generations_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nascaps(&[
        "search",
        "--generations",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("generations"));
}

#[test]
fn bad_search_file_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("search.cfg");
    std::fs::write(&cfg, "parent_size = ten\n").unwrap();
    let o = nascaps(&[
        "search",
        "--search",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("parent_size"), "{}", stderr(&o));
}

#[test]
fn time_limit_accepts_hours_and_stops_early_when_exhausted() {
    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("long");
    let o = nascaps(&[
        "search",
        "--time-limit",
        "12h",
        "--generations",
        "2",
        "--out",
        long.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let short = dir.path().join("short");
    let o = nascaps(&[
        "search",
        "--time-limit",
        "0s",
        "--out",
        short.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(short.join("run.jsonl").exists());
}

#[test]
fn search_over_the_bridge() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bridge");
    let cmd = format!("NASCAPS_LOOPBACK_ACCURACY=0.6 '{TRAINER}'");
    let o = nascaps(&[
        "search",
        "--backend",
        "bridge",
        "--trainer-cmd",
        &cmd,
        "--generations",
        "2",
        "--workers",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"accuracy\":0.6")));
}

#[test]
fn dead_trainer_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = format!("NASCAPS_LOOPBACK_MODE=exit '{TRAINER}'");
    let o = nascaps(&[
        "search",
        "--backend",
        "bridge",
        "--trainer-cmd",
        &cmd,
        "--generations",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bridge_without_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nascaps(&[
        "search",
        "--backend",
        "bridge",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cache_env_persists_results() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let run = |name: &str| {
        Command::new(BIN)
            .args([
                "search",
                "--generations",
                "2",
                "--out",
                dir.path().join(name).to_str().unwrap(),
            ])
            .env("NASCAPS_CACHE", &cache)
            .output()
            .unwrap()
    };
    assert_eq!(run("a").status.code(), Some(0));
    let first = std::fs::read_to_string(&cache).unwrap().lines().count();
    assert!(first > 0);
    assert_eq!(run("b").status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&cache).unwrap().lines().count(),
        first
    );
}

#[test]
fn estimate_capsnet_preset() {
    let o = nascaps(&["estimate", "--preset", "capsnet", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // 20,992 + 5,308,672 + 1,475,840 + 320 weights, one byte each.
    let kib = v["memory_kib"].as_f64().unwrap();
    assert!((kib - 6_805_824.0 / 1024.0).abs() < 1e-9);
    assert_eq!(v["layers"].as_array().unwrap().len(), 4);
}

#[test]
fn estimate_deepcaps_has_fourteen_primitives() {
    let o = nascaps(&["estimate", "--preset", "deepcaps", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let layers = v["layers"].as_array().unwrap();
    assert_eq!(layers.iter().filter(|l| l["routing"] == false).count(), 14);
    assert!(stdout(&nascaps(&["estimate", "--preset", "deepcaps"])).contains("14 primitive layers"));
}

#[test]
fn estimate_rejects_malformed_and_invalid_genotypes() {
    assert_eq!(nascaps(&["estimate", "conv,28"]).status.code(), Some(1));
    // Channel mismatch between layers 0 and 1.
    let o = nascaps(&["estimate", "conv,28,1,1,9,1,20,256,1;cconv,20,128,1,9,2,6,32,8;ccaps,6,32,8,1,1,1,10,16;skip=none;resize=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("layer 1"), "{}", stderr(&o));
}

#[test]
fn estimate_honors_hw_file() {
    let dir = tempfile::tempdir().unwrap();
    let hw = dir.path().join("hw.cfg");
    std::fs::write(&hw, "clock_period_ns = 6.0\n").unwrap();
    let o = nascaps(&[
        "estimate",
        "--preset",
        "capsnet",
        "--format",
        "json",
        "--hw",
        hw.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["latency_ms"].as_f64().unwrap() - 2.61006).abs() < 1e-9);
    std::fs::write(&hw, "clock_period_ns = -1\n").unwrap();
    assert_eq!(
        nascaps(&[
            "estimate",
            "--preset",
            "capsnet",
            "--hw",
            hw.to_str().unwrap()
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn rand_prints_valid_genotypes_deterministically() {
    let o = nascaps(&["rand", "-n", "66", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 66);
    for l in &lines {
        let g = Genotype::deserialize(l).unwrap();
        assert!(validate(&g).is_empty(), "{l}");
    }
    assert_eq!(text, stdout(&nascaps(&["rand", "-n", "66", "--seed", "1"])));
}

fn write_traces(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("t.jsonl");
    let mut text = String::new();
    for i in 0..6 {
        let fin = 0.5 + 0.07 * i as f64;
        let accs: Vec<String> = (1..=20)
            .map(|e| format!("{}", fin * (1.0 - 0.5f64.powi(e))))
            .collect();
        let secs: Vec<String> = (1..=20).map(|e| format!("{}", 3.0 * e as f64)).collect();
        let reference = if i == 0 { ",\"reference\":true" } else { "" };
        text.push_str(&format!(
            "{{\"id\":\"n{i}\",\"epochs\":[{}],\"accuracies\":[{}],\"train_seconds\":[{}]{reference}}}\n",
            (1..=20).map(|e| e.to_string()).collect::<Vec<_>>().join(","),
            accs.join(","),
            secs.join(",")
        ));
    }
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn correlate_prints_checkpoint_columns() {
    let dir = tempfile::tempdir().unwrap();
    let traces = write_traces(dir.path());
    let o = nascaps(&[
        "correlate",
        "--traces",
        traces.to_str().unwrap(),
        "--epochs",
        "1,3,5,10,15,20",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(header, ["epoch", "1", "3", "5", "10", "15", "20"]);
    assert!(text.contains("MCTT"));

    let o = nascaps(&[
        "correlate",
        "--traces",
        traces.to_str().unwrap(),
        "--exclude-references",
    ]);
    assert!(stdout(&o).starts_with("5 traces"));
    let o = nascaps(&[
        "correlate",
        "--traces",
        traces.to_str().unwrap(),
        "--epochs",
        "21",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n0"));
}

#[test]
fn report_writes_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, ds) in [(&a, "mnist"), (&b, "fmnist")] {
        let o = nascaps(&[
            "search",
            "--dataset",
            ds,
            "--generations",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let rep = dir.path().join("rep");
    let la = format!("mnist={}", a.join("run.jsonl").display());
    let lb = format!("fmnist={}", b.join("run.jsonl").display());
    let o = nascaps(&[
        "report",
        "--logs",
        &la,
        &lb,
        "--format",
        "csv",
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "pareto.csv",
        "points.csv",
        "fronts.csv",
        "transferability.csv",
    ] {
        assert!(rep.join(f).exists(), "{f}");
    }
    assert!(!rep.join("pareto.json").exists());
    let fronts = std::fs::read_to_string(rep.join("fronts.csv")).unwrap();
    assert_eq!(fronts.lines().count(), 1 + 3 + 3);
}

#[test]
fn report_flags_corrupt_log_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"id\":\"a\"}\n").unwrap();
    let o = nascaps(&[
        "report",
        "--logs",
        log.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl:1:"), "{}", stderr(&o));
}

#[test]
fn calibrate_reports_non_physical_fit_and_positive_fallback() {
    let o = nascaps(&["calibrate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("non-physical"));
    let dir = tempfile::tempdir().unwrap();
    let hw = dir.path().join("fitted.cfg");
    let o = nascaps(&["calibrate", "--positive", "--write", hw.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("capsnet-cifar10"));
    let fitted = nascaps::hwmodel::HardwareConfig::read(&hw).unwrap();
    assert_eq!(fitted, nascaps::hwmodel::HardwareConfig::default());
}

#[test]
fn unknown_subcommand_and_flag_print_usage() {
    let o = nascaps(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = nascaps(&["rand", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(nascaps(&["--help"]).status.code(), Some(0));
}
