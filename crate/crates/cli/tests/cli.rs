use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn calibra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calibra"))
        .args(args)
        .env_remove("CALIBRA_SEED")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The report with its two timing fields removed.
fn without_timestamps(text: &[u8]) -> String {
    String::from_utf8_lossy(text)
        .lines()
        .filter(|l| !l.contains("\"startedAt\"") && !l.contains("\"durationMs\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn models_g2_reports_constant_three() {
    let out = calibra(&[
        "models",
        "--tag",
        "g2",
        "--samples",
        "10000",
        "--seed",
        "7",
        "--trials",
        "2000",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["pass"], true);
    let g2 = &r["results"]["models"][0];
    assert_eq!(g2["iotaConstSq"].as_f64(), Some(3.0));
    for key in [
        "tag",
        "m",
        "k",
        "normSq",
        "iotaConstSq",
        "maxDeviation",
        "minMargin",
    ] {
        assert!(!g2[key].is_null(), "missing {key}");
    }
    assert!(g2["minMargin"].as_f64().unwrap() >= -1e-9);
}

#[test]
fn torus_min_fixture_reaches_target() {
    let out = calibra(&[
        "torus-min",
        "--config",
        fixture("t2.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["config"]["seed"], 7);
    let excess = r["results"]["relativeExcess"].as_f64().unwrap();
    assert!((-1e-12..=0.005).contains(&excess), "{excess}");
    assert_eq!(r["results"]["G"][0][1].as_f64(), Some(0.2));
}

#[test]
fn verify_amgm_margin() {
    let out = calibra(&["verify", "--suite", "amgm", "--trials", "100000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    assert!(r["results"]["suites"][0]["minMargin"].as_f64().unwrap() >= -1e-10);
}

#[test]
fn reports_are_reproducible_and_worker_independent() {
    let args = ["intersection", "--samples", "20000", "--seed", "5"];
    let a = calibra(&args);
    let b = calibra(&args);
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "3"]);
    let c = calibra(&with_workers);
    assert_eq!(without_timestamps(&a.stdout), without_timestamps(&b.stdout));
    let strip_workers = |s: String| s.replace("\"workers\": 3", "\"workers\": null");
    assert_eq!(
        without_timestamps(&a.stdout),
        strip_workers(without_timestamps(&c.stdout))
    );
    let r = json(&a);
    assert!(r["startedAt"].as_str().unwrap().ends_with('Z'));
    assert!(r["durationMs"].is_u64());
}

#[test]
fn seed_precedence() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_calibra"));
        cmd.args(["torus-invariance", "--trials", "2", "--config"])
            .arg(fixture("t2.json"));
        cmd.env_remove("CALIBRA_SEED");
        if let Some(e) = env {
            cmd.env("CALIBRA_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        json(&cmd.output().unwrap())["config"]["seed"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(run(None, None), 7);
    assert_eq!(run(Some("99"), None), 7);
    assert_eq!(run(Some("99"), Some("3")), 3);

    let out = Command::new(env!("CARGO_BIN_EXE_calibra"))
        .args(["verify", "--suite", "amgm", "--trials", "10"])
        .env("CALIBRA_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(json(&out)["config"]["seed"], 99);
    let out = calibra(&["verify", "--suite", "amgm", "--trials", "10"]);
    assert_eq!(json(&out)["config"]["seed"], calibra_cli::DEFAULT_SEED);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_type = dir.path().join("bad_type.json");
    std::fs::write(&bad_type, r#"{"m": 2, "n": 2, "gridN": "sixty-four"}"#).unwrap();
    let out = calibra(&["torus-min", "--config", bad_type.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gridN"), "{}", stderr(&out));

    let nested = dir.path().join("nested.json");
    std::fs::write(&nested, r#"{"Q": [[1, 0], [0, 1.5]]}"#).unwrap();
    let out = calibra(&["bound", "--config", nested.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Q[1][1]"), "{}", stderr(&out));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"suite": "amgm", "trails": 10}"#).unwrap();
    let out = calibra(&["verify", "--config", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trails"), "{}", stderr(&out));

    let wrong_shape = dir.path().join("shape.json");
    std::fs::write(&wrong_shape, r#"{"m": 3, "n": 2, "Q": [[1, 0], [0, 1]]}"#).unwrap();
    let out = calibra(&["intersection", "--config", wrong_shape.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["models", "--csv"],
        vec!["torus-min", "--json", "--csv"],
        vec!["verify", "--suite", "nonsense"],
        vec!["models", "--tag", "kahler(x)"],
        vec!["bound", "--k", "3"],
        vec!["no-such-command"],
        vec!["models", "--config", "/nonexistent/config.json"],
    ] {
        let out = calibra(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn computation_errors_exit_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let form = dir.path().join("scalar.json");
    std::fs::write(&form, r#"{"m": 3, "k": 0, "coeffs": [1.0]}"#).unwrap();
    let out = calibra(&[
        "models",
        "--tag",
        "kahler(1)",
        "--form",
        form.to_str().unwrap(),
        "--trials",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out);
    assert_eq!(r["pass"], false);
    assert!(r["results"]["error"].as_str().unwrap().contains("degree"));
}

#[test]
fn csv_history() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = calibra(&[
        "torus-min",
        "--csv",
        "--config",
        fixture("t2.json").to_str().unwrap(),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["iteration", "energy"]);
    let energies: Vec<f64> = rows
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert!(energies.len() >= 2);
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn corrupted_g2_fixture_fails_suite() {
    let out = calibra(&[
        "suite-all",
        "--quick",
        "--g2-form",
        fixture("g2_negated_term.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let r = json(&out);
    let first = &r["results"]["outcomes"][0];
    assert_eq!(first["id"], "1");
    assert_eq!(first["pass"], false);
    let g2 = &first["details"]["models"][3];
    assert!(
        g2["violations"][0].as_str().unwrap().contains("structure"),
        "{g2}"
    );
    assert!(stderr(&out).contains("[FAIL] 1"));
}

#[test]
fn correct_g2_fixture_and_quick_mode_pass() {
    let out = calibra(&[
        "suite-all",
        "--quick",
        "--g2-form",
        fixture("g2.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["results"]["quick"], true);
    assert!(r["results"]["outcomes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|o| o["pass"] == true));
}

#[test]
fn schema_lists_every_parameter() {
    let schema: Value = serde_json::from_str(include_str!("../../../docs/config.schema.json"))
        .expect("schema is JSON");
    let defs = &schema["$defs"];
    let cases: [(&str, Value); 4] = [
        (
            "models",
            serde_json::to_value(calibra_cli::config::ModelsParams::default()).unwrap(),
        ),
        (
            "verify",
            serde_json::to_value(calibra_cli::config::VerifyParams::default()).unwrap(),
        ),
        (
            "torus",
            serde_json::to_value(calibra_cli::config::TorusParams::default()).unwrap(),
        ),
        (
            "suite",
            serde_json::to_value(calibra_cli::config::SuiteParams::default()).unwrap(),
        ),
    ];
    for (name, defaults) in cases {
        let props = defs[name]["properties"]
            .as_object()
            .unwrap_or_else(|| panic!("no $defs.{name}"));
        let mut documented: Vec<&String> = props.keys().collect();
        let mut accepted: Vec<&String> = defaults.as_object().unwrap().keys().collect();
        documented.sort();
        accepted.sort();
        assert_eq!(documented, accepted, "{name}");
        assert_eq!(defs[name]["additionalProperties"], false);
    }
}
