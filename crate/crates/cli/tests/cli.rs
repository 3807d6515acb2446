use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn skattr(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skattr"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = skattr(args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, users: &str, seed: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&["generate", "--users", users, "--seed", seed, "--out", path(&data)]);
    data
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

/// Body lines of a stage file, without the metadata comment.
fn body(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn stages_match_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "5000", "3");
    let counts = dir.path().join("counts.csv");
    let private = dir.path().join("counts_p10.csv");
    let attr = dir.path().join("attr.csv");
    let eval = dir.path().join("eval.json");
    ok(&["simulate", "--users", path(&data), "--schema", "D7 RI", "--seed", "3", "--out", path(&counts)]);
    ok(&["privatize", "--counts", path(&counts), "--p", "10", "--out", path(&private)]);
    ok(&[
        "attribute", "--counts", path(&private), "--profile-from", path(&data), "--g", "null_convex", "--lambda",
        "0.5", "--out", path(&attr),
    ]);
    ok(&["evaluate", "--attr", path(&attr), "--truth-from", path(&data), "--t", "30", "--out", path(&eval)]);

    let cfg = dir.path().join("run.json");
    let run = serde_json::json!({
        "dataset": data,
        "schemas": ["D30 PV", "D7 RI"],
        "p_values": [10],
        "g_modes": ["null_uniform", "null_convex"],
        "lambdas": [0.5],
        "window_curve": null,
    });
    fs::write(&cfg, run.to_string()).unwrap();
    let report_dir = dir.path().join("report");
    ok(&["benchmark", "--config", path(&cfg), "--seed", "3", "--out", path(&report_dir)]);

    let stage = json(&eval);
    let report = json(&report_dir.join("report.json"));
    for (i, level) in ["campaign", "network"].iter().enumerate() {
        let cell = report["cells"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["schema"] == "D7 RI" && c["g"] == "null_convex" && c["level"] == *level)
            .unwrap();
        assert_eq!(stage["levels"][i]["level"], *level);
        assert_eq!(stage["levels"][i]["aggregate"], cell["aggregate_error"]);
        assert_eq!(stage["levels"][i]["weekly"], cell["weekly"]);
    }
}

#[test]
fn plain_equals_null_uniform_without_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "3000", "5");
    let counts = dir.path().join("counts.csv");
    let p0 = dir.path().join("p0.csv");
    ok(&["simulate", "--users", path(&data), "--schema", "kind=RR;layout=TTTVVV;horizon=7", "--seed", "5", "--out", path(&counts)]);
    ok(&["privatize", "--counts", path(&counts), "--p", "0", "--out", path(&p0)]);
    let plain = dir.path().join("plain.csv");
    let uniform = dir.path().join("uniform.csv");
    let base = ["attribute", "--counts", path(&p0), "--profile-from", path(&data), "--g"];
    ok(&[&base[..], &["plain", "--out", path(&plain)]].concat());
    ok(&[&base[..], &["null_uniform", "--out", path(&uniform)]].concat());
    assert_eq!(body(&plain), body(&uniform));
    assert!(body(&plain).len() > 10);
}

#[test]
fn default_grid_baseline_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 2\n\n[generator]\nn_users = 10000\n").unwrap();
    let out = dir.path().join("report");
    ok(&["benchmark", "--config", path(&cfg), "--out", path(&out)]);
    let report = json(&out.join("report.json"));
    let cells = report["cells"].as_array().unwrap();
    let baselines: Vec<_> = cells
        .iter()
        .filter(|c| c["schema"] == "D30 PV" && c["g"] == "null_uniform")
        .collect();
    assert_eq!(baselines.len(), 8);
    assert!(baselines.iter().all(|c| c["score"] == 0.0));
    assert_eq!(report["window_curve"].as_array().unwrap().len(), 4);
    assert!(out.join("report.csv").exists());
    assert!(out.join("window_curve.csv").exists());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let run = serde_json::json!({
        "generator": { "n_users": 4000, "seed": 9 },
        "schemas": ["D30 PV", "EV", "D1 RR", "UD"],
    });
    fs::write(&cfg, run.to_string()).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("report{threads}"));
        let res = skattr(&["benchmark", "--config", path(&cfg), "--seed", "9", "--out", path(&out)], &[("SKATTR_THREADS", threads)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let files: Vec<Vec<u8>> = ["report.json", "report.csv", "window_curve.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn failures_emit_json_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = skattr(
        &["simulate", "--users", path(&dir.path().join("missing")), "--schema", "EV", "--out", "x.csv"],
        &[],
    );
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");

    let data = generate(dir.path(), "500", "1");
    let out = skattr(
        &["simulate", "--users", path(&data), "--schema", "kind=RR;layout=TTVVVV;horizon=7", "--out", "x.csv"],
        &[],
    );
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "schema");
}
