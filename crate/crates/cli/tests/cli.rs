use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn fedpae(args: &[&str]) -> Output {
    fedpae_env(args, &[])
}

fn fedpae_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedpae"));
    cmd.args(args).env_remove("FEDPAE_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn fedpae")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

fn small_config(seed: u64) -> Value {
    json!({
        "master_seed": seed,
        "dataset": {"kind": "synthetic", "n_classes": 3, "n_features": 4, "n_samples": 360,
                    "class_separation": 3.0, "noise_scale": 1.0, "seed": 0},
        "alpha": 0.5,
        "n_clients": 4,
        "min_client_samples": 20,
        "slots": [
            {"architecture": "logistic_regression", "max_epochs": 30, "patience": 10},
            {"architecture": "nearest_centroid"},
            {"architecture": {"stump_forest": {"n_stumps": 10}}}
        ],
        "selection": {"ensemble_size": 3},
        "nsga": {"population_size": 20, "generations": 10},
        "fedavg": {"architecture": "logistic_regression", "rounds": 50}
    })
}

#[test]
fn gen_partition_run_report_oracle_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let spec = write(
        dir,
        "spec.json",
        &json!({"n_classes": 3, "n_features": 4, "n_samples": 360, "class_separation": 3.0, "noise_scale": 1.0, "seed": 7}),
    );
    let data = dir.join("data.bin").display().to_string();
    ok(&fedpae(&["gen", "--spec", &spec, "--out", &data]));
    // header + 3 u32 fields, 360*4 f32 features, 360 u16 labels
    assert_eq!(fs::metadata(&data).unwrap().len(), 12 + 360 * 4 * 4 + 360 * 2);

    let part = dir.join("part.json").display().to_string();
    ok(&fedpae(&[
        "partition",
        "--data",
        &data,
        "--alpha",
        "0.5",
        "--clients",
        "4",
        "--seed",
        "42",
        "--min-client-samples",
        "20",
        "--out",
        &part,
    ]));
    let p: Value = serde_json::from_str(&fs::read_to_string(&part).unwrap()).unwrap();
    assert_eq!(p["clients"].as_array().unwrap().len(), 4);
    let mut all: Vec<u64> = p["clients"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|c| ["train", "val", "test"].map(|k| c[k].as_array().unwrap().clone()))
        .flatten()
        .map(|v| v.as_u64().unwrap())
        .collect();
    all.sort();
    assert_eq!(all, (0..360).collect::<Vec<u64>>());

    let mut cfg = small_config(1);
    cfg["dataset"] = json!({"kind": "file", "path": data});
    cfg["partition_file"] = json!(part);
    let cfg = write(dir, "exp.json", &cfg);
    let out = dir.join("results").display().to_string();
    ok(&fedpae(&["run", "--config", &cfg, "--out", &out]));
    for f in [
        "results.json",
        "results.csv",
        "relative_change.csv",
        "trace.jsonl",
        "timing.json",
        "pareto/client_0.jsonl",
    ] {
        assert!(Path::new(&out).join(f).is_file(), "missing {f}");
    }

    let csv = ok(&fedpae(&["report", "--in", &out, "--format", "csv"]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,alpha,master_seed,n_clients,mean,ci95,sd");
    assert_eq!(lines.len(), 1 + 4);
    let report: Value = serde_json::from_str(&ok(&fedpae(&["report", "--in", &out, "--format", "json"]))).unwrap();
    assert_eq!(report["alpha"], json!(0.5));

    let bench = Path::new(&out).join("client_0").display().to_string();
    let oracle: Value = serde_json::from_str(&ok(&fedpae(&["oracle", "--bench", &bench, "--k", "3"]))).unwrap();
    assert!(oracle["masks_evaluated"].as_u64().unwrap() > 0);
    assert!(oracle["chosen_val_accuracy"].as_f64().unwrap() <= oracle["oracle_val_accuracy"].as_f64().unwrap());
}

#[test]
fn runs_are_byte_identical_and_seed_env_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "exp.json", &small_config(1));
    let run = |name: &str, env: &[(&str, &str)]| {
        let out = tmp.path().join(name);
        ok(&fedpae_env(
            &["run", "--config", &cfg, "--out", &out.display().to_string()],
            env,
        ));
        fs::read(out.join("results.json")).unwrap()
    };
    let a = run("a", &[]);
    assert_eq!(a, run("b", &[]));
    let c: Value = serde_json::from_slice(&run("c", &[("FEDPAE_SEED", "9")])).unwrap();
    assert_eq!(c["master_seed"], json!(9));

    let bad = fedpae_env(
        &["run", "--config", &cfg, "--out", "unused"],
        &[("FEDPAE_SEED", "nine")],
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_directory_per_run_and_a_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "exp.json", &small_config(0));
    let out = tmp.path().join("sweep");
    ok(&fedpae(&[
        "run",
        "--config",
        &cfg,
        "--out",
        &out.display().to_string(),
        "--alpha",
        "0.3,0.5",
        "--seed",
        "0",
    ]));
    assert!(out.join("alpha_0.3_seed_0/results.json").is_file());
    assert!(out.join("alpha_0.5_seed_0/results.json").is_file());
    let grid = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2 * 4);
    let summary: Value = serde_json::from_str(&ok(&fedpae(&[
        "report",
        "--in",
        &out.display().to_string(),
        "--format",
        "json",
    ])))
    .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn cost_matches_the_worked_example() {
    let tmp = TempDir::new().unwrap();
    let params = write(
        tmp.path(),
        "cost.json",
        &json!({
            "n_clients": 2, "slots": ["unit"], "training_iterations": 10, "train_samples": 100,
            "population_size": 5, "generations": 4, "c_eval": 1, "pareto_size": 3, "val_samples": 50,
            "chosen_forward_flops": 1, "forward_flops": {"unit": 1}, "training_multiplier": 3
        }),
    );
    let v: Value = serde_json::from_str(&ok(&fedpae(&[
        "cost",
        "--params",
        &params,
        "--fedavg-arch",
        "unit",
        "--rounds",
        "500",
    ])))
    .unwrap();
    assert_eq!(v["total"], json!(6340.0));
    assert_eq!(v["fedavg"]["total"], json!(2.0 * 3.0 * 500.0 * 100.0));
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    // configuration error: n_clients below 2
    let mut cfg = small_config(0);
    cfg["n_clients"] = json!(1);
    let cfg = write(dir, "bad.json", &cfg);
    assert_eq!(
        fedpae(&["run", "--config", &cfg, "--out", "unused"]).status.code(),
        Some(2)
    );
    // usage error from argument parsing
    assert_eq!(fedpae(&["oracle"]).status.code(), Some(2));
    // input error: missing dataset
    let missing = dir.join("none.bin").display().to_string();
    let out = dir.join("p.json").display().to_string();
    let code = fedpae(&[
        "partition",
        "--data",
        &missing,
        "--alpha",
        "0.1",
        "--clients",
        "2",
        "--out",
        &out,
    ])
    .status
    .code();
    assert_eq!(code, Some(3));
    // input error: corrupt bench
    let bench = dir.join("bench");
    fs::create_dir(&bench).unwrap();
    fs::write(bench.join("bench.json"), "{}").unwrap();
    let code = fedpae(&["oracle", "--bench", &bench.display().to_string()])
        .status
        .code();
    assert_eq!(code, Some(3));
}
