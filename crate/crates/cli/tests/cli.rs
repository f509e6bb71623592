use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qtmlab"));
    cmd.env_remove("QTMLAB_JOBS");
    cmd
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qtmlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_instance_certifies() {
    let out = scratch("solve");
    let res = run("solve", &configs().join("solve.json"), &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let cert = json(&out.join("certificate.json"));
    assert_eq!(cert["schemaVersion"], 1);
    assert_eq!(cert["certified"], true);
    assert!(cert["focResidual"].as_f64().unwrap() < 1e-10);
    let csv = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("# qtmlab bound-report v1\n"));
}

#[test]
fn malformed_json_names_byte_offset() {
    let dir = scratch("malformed");
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{\"instance\": [1, 2,,]}").unwrap();
    let res = run("solve", &cfg, &dir, &[]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("byte offset 19"), "{err}");
}

#[test]
fn missing_config_is_usage_error() {
    let dir = scratch("missing");
    let res = run("solve", &dir.join("nope.json"), &dir, &[]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = scratch("unknown");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"spreads": [4], "perBuckets": 3}"#).unwrap();
    assert_eq!(run("sweep", &cfg, &dir, &[]).status.code(), Some(2));
}

#[test]
fn repeated_seed_gives_identical_bytes() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    for out in [&a, &b] {
        let res = run(
            "solve",
            &configs().join("solve_m3.json"),
            out,
            &["--seed", "42"],
        );
        assert_eq!(res.status.code(), Some(0));
    }
    for f in ["certificate.json", "bounds.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
    let cert = json(&a.join("certificate.json"));
    assert_eq!(cert["seed"], 42);
}

#[test]
fn empty_grid_exits_two() {
    let dir = scratch("empty");
    let cfg = dir.join("sweep.json");
    std::fs::write(&cfg, r#"{"spreads": []}"#).unwrap();
    assert_eq!(run("sweep", &cfg, &dir, &[]).status.code(), Some(2));
}

#[test]
fn sweep_is_job_count_independent() {
    let dir = scratch("jobs");
    let cfg = dir.join("sweep.json");
    std::fs::write(&cfg, r#"{"spreads": [4, 64], "perBucket": 4, "seed": 3}"#).unwrap();
    let one = dir.join("one");
    let four = dir.join("four");
    assert_eq!(
        run("sweep", &cfg, &one, &["--jobs", "1"]).status.code(),
        Some(0)
    );
    let res = bin()
        .env("QTMLAB_JOBS", "4")
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&four)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    for f in ["sweep.csv", "sweep_summary.csv"] {
        assert_eq!(
            std::fs::read(one.join(f)).unwrap(),
            std::fs::read(four.join(f)).unwrap()
        );
    }
    let csv = std::fs::read_to_string(one.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 8);
}

#[test]
fn zero_jobs_is_rejected() {
    let dir = scratch("zero-jobs");
    let res = run(
        "sweep",
        &configs().join("sweep.json"),
        &dir,
        &["--jobs", "0"],
    );
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn sweep_buckets_clear_the_spread_bound() {
    let out = scratch("sweep");
    let res = run("sweep", &configs().join("sweep.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let margin: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(margin >= 0.0, "{row}");
    }
}

#[test]
fn truthful_market_run_certifies() {
    let out = scratch("market");
    let res = run("squap", &configs().join("squap_market.json"), &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let doc = json(&out.join("squap_run.json"));
    assert_eq!(doc["label"], "certified");
    let lines = std::fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
}

#[test]
fn manipulated_market_stays_within_deviation_bound() {
    let out = scratch("manipulated");
    let res = run(
        "squap",
        &configs().join("squap_manipulated.json"),
        &out,
        &[],
    );
    assert_eq!(res.status.code(), Some(0));
    let doc = json(&out.join("squap_run.json"));
    let x = doc["maxValue"].as_f64().unwrap();
    let dev = doc["B"]
        .as_array()
        .unwrap()
        .iter()
        .zip(doc["Bhat"].as_array().unwrap())
        .map(|(a, b)| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs())
        .fold(0.0, f64::max);
    assert!(dev <= 0.1 * x);
    assert!(doc["manipulation"].is_object());
}

#[test]
fn practical_run_is_marked_uncertified() {
    let out = scratch("practical");
    let cfg = configs().join("squap_practical.json");
    assert_eq!(run("squap", &cfg, &out, &[]).status.code(), Some(1));
    let doc = json(&out.join("squap_run.json"));
    assert_eq!(doc["label"], "uncertified");
    assert_eq!(
        run("squap", &cfg, &out, &["--mode", "measure"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn iteration_cap_is_uncertified_not_fatal() {
    let dir = scratch("cap");
    let cfg = dir.join("solve.json");
    std::fs::write(
        &cfg,
        r#"{"instance": {"n": 2, "m": 3, "values": [[1, 0.2, 0], [0, 0.9, 0.3]]},
            "fixedPoint": {"damping": 0.5, "maxIter": 1, "tol": 1e-10}}"#,
    )
    .unwrap();
    assert_eq!(run("solve", &cfg, &dir, &[]).status.code(), Some(1));
    let cert = json(&dir.join("certificate.json"));
    assert_eq!(cert["status"], "max-iterations");
    assert_eq!(
        run("solve", &cfg, &dir, &["--mode", "measure"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn solver_failure_exits_three() {
    let dir = scratch("fail");
    let cfg = dir.join("squap.json");
    std::fs::write(
        &cfg,
        r#"{"instance": {"n": 1, "m": 3, "values": [[1, 0, 0]], "B": [1, 1, 1]},
            "squap": {"epsilon": 0.1, "variant": "practical"}}"#,
    )
    .unwrap();
    let res = run("squap", &cfg, &dir, &[]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
}

#[test]
fn generate_writes_a_loadable_instance() {
    let out = scratch("generate");
    assert_eq!(
        run("generate", &configs().join("generate.json"), &out, &[])
            .status
            .code(),
        Some(0)
    );
    let inst = json(&out.join("instance.json"));
    assert_eq!(inst["n"], 20);
    let cfg = out.join("solve.json");
    std::fs::write(&cfg, r#"{"instance": "instance.json"}"#).unwrap();
    assert_eq!(run("solve", &cfg, &out, &[]).status.code(), Some(0));
}
