use std::path::Path;
use std::process::{Command, Output};

fn safetune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safetune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn gen_scenario(dir: &Path, extra: &[&str]) -> String {
    let path = dir.join("scenario.json");
    let path_str = path.to_str().unwrap().to_string();
    let mut args = vec![
        "--seed",
        "4",
        "--out",
        &path_str,
        "gen",
        "--contexts",
        "6",
        "--outputs",
        "3",
    ];
    args.extend_from_slice(extra);
    let out = safetune(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path_str
}

#[test]
fn gen_writes_seventeen_digit_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_scenario(dir.path(), &["--similarity", "0.5"]);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 4);
    assert!(text.contains("e-"), "floats in exponent form");
}

#[test]
fn solve_reports_gaps_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = gen_scenario(dir.path(), &[]);
    let model = dir.path().join("model.json");
    let out = safetune(&[
        "solve",
        "--scenario",
        &scenario,
        "--case",
        "I",
        "--lambda",
        "0.5",
        "--model-out",
        model.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["case"], "I");
    assert_eq!(v["bounds"].as_array().unwrap().len(), 2);
    assert_eq!(v["bounds"][0]["theorem"], 1);
    assert!(v["bounds"][0]["slack"].as_f64().unwrap() >= -1e-9);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(m["variant"], "tabular");

    let out = safetune(&[
        "solve",
        "--scenario",
        &scenario,
        "--case",
        "II",
        "--epsilon",
        "0.5",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["bounds"][1]["theorem"], 4);
    assert!(v["bounds"][1]["radius_valid"].is_boolean());
}

#[test]
fn zero_lambda_bound_is_inf_in_json() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = gen_scenario(dir.path(), &[]);
    let out = safetune(&[
        "solve",
        "--scenario",
        &scenario,
        "--case",
        "I",
        "--lambda",
        "0",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["bounds"][0]["bound_value"], "inf");
}

#[test]
fn sweep_is_byte_identical_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(format!("{name}.csv"));
        let svg = dir.path().join(format!("{name}.svg"));
        let out = safetune(&[
            "--format",
            "csv",
            "--out",
            csv.to_str().unwrap(),
            "sweep",
            "--case",
            "I",
            "--seeds",
            "0,1,2",
            "--svg",
            svg.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        (
            std::fs::read(&csv).unwrap(),
            std::fs::read(&svg).unwrap(),
            csv,
        )
    };
    let (csv_a, svg_a, path) = run("a");
    let (csv_b, svg_b, _) = run("b");
    assert_eq!(csv_a, csv_b);
    assert_eq!(svg_a, svg_b);
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 16);

    let out = safetune(&[
        "--format",
        "csv",
        "report",
        "--input",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("case,seed,knob,g_s,g_f"));
    assert_eq!(
        text.lines().count(),
        16,
        "exact proxy keeps every λ on the frontier"
    );
}

#[test]
fn verify_passes_small_batch() {
    let out = safetune(&[
        "--format",
        "csv",
        "verify",
        "--count",
        "3",
        "--samples",
        "32",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn invalid_input_exits_with_two() {
    let out = safetune(&["solve", "--scenario", "/nonexistent.json", "--case", "I"]);
    assert_eq!(out.status.code(), Some(2));
    let out = safetune(&["gen", "--overlap", "2.0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = safetune(&["sweep", "--case", "I", "--knobs", "0.5,0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = safetune(&["--format", "yaml", "gen"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 0}"#).unwrap();
    let out = safetune(&["solve", "--scenario", bad.to_str().unwrap(), "--case", "II"]);
    assert_eq!(out.status.code(), Some(2));
}
