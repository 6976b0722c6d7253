use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grasp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .current_dir(dir)
        .args(args)
        .env_remove("GRASP_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = grasp(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    grasp(dir, args).status.code().unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            );
        }
    }
    out
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run-manifest.json")).unwrap()).unwrap()
}

/// Generates a small dataset and trains a tiny model on it.
fn trained(dir: &Path) {
    ok(
        dir,
        &["--seed", "4", "gen-data", "--n-sets", "16", "-o", "data"],
    );
    ok(
        dir,
        &[
            "--seed",
            "4",
            "train",
            "--data",
            "data",
            "--hidden",
            "6",
            "--epochs",
            "1",
            "--channels",
            "0-3",
            "-o",
            "train",
        ],
    );
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(p, &["--seed", "9", "gen-data", "--n-sets", "6", "-o", "a"]);
    ok(p, &["--seed", "9", "gen-data", "--n-sets", "6", "-o", "b"]);
    let (a, b) = (snapshot(&p.join("a")), snapshot(&p.join("b")));
    assert_eq!(a, b);
    assert_eq!(a.keys().filter(|k| k.ends_with(".trace")).count(), 6);

    // A populated directory is refused without --force.
    assert_eq!(code(p, &["gen-data", "--n-sets", "2", "-o", "a"]), 1);
    assert_eq!(snapshot(&p.join("a")), b);
    ok(p, &["--force", "gen-data", "--n-sets", "2", "-o", "a"]);
    let a = snapshot(&p.join("a"));
    assert_eq!(a.keys().filter(|k| k.ends_with(".trace")).count(), 2);

    ok(p, &["gen-data", "--n-sets", "0", "-o", "empty"]);
    let empty = snapshot(&p.join("empty"));
    assert!(
        empty.keys().all(|k| !k.ends_with(".trace")),
        "{:?}",
        empty.keys()
    );
    assert!(empty.contains_key("run-manifest.json"));

    let m = manifest(&p.join("b"));
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 9);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .all(|o| o["sha256"].as_str().unwrap().len() == 64));
    assert!(outputs
        .iter()
        .all(|o| !Path::new(o["path"].as_str().unwrap()).is_absolute()));
}

#[test]
fn out_dir_defaults_to_env_then_local() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(p, &["gen-data", "--n-sets", "1"]);
    assert!(p.join("grasp-out/gen-data/run-manifest.json").is_file());
    let out = Command::new(env!("CARGO_BIN_EXE_grasp"))
        .current_dir(p)
        .args(["gen-data", "--n-sets", "1"])
        .env("GRASP_OUT_DIR", p.join("runs"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(p.join("runs/gen-data/run-manifest.json").is_file());
}

#[test]
fn convert_reads_csv_with_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::create_dir(p.join("raw")).unwrap();
    let header: Vec<String> = (0..16).map(|c| format!("c{c}")).collect();
    let mut csv = header.join(",") + "\n";
    for t in 0..200 {
        let v = if t < 150 { 300.0 + t as f64 } else { 0.0 };
        let row: Vec<String> = (0..16).map(|c| (v / (c + 1) as f64).to_string()).collect();
        csv.push_str(&(row.join(",") + "\n"));
    }
    fs::write(p.join("raw/grasp01.csv"), &csv).unwrap();
    fs::write(
        p.join("raw/grasp01.json"),
        r#"{"outcome": "failure", "direction": "top", "object": "mug"}"#,
    )
    .unwrap();
    ok(p, &["convert", "raw", "--downsample", "2", "-o", "ds"]);
    let text = fs::read_to_string(p.join("ds/grasp01.trace")).unwrap();
    assert!(text.contains("mug"), "{text}");
    assert!(text.contains("top"));

    // Without outcome or direction the CSV cannot be labeled.
    fs::remove_file(p.join("raw/grasp01.json")).unwrap();
    assert_eq!(code(p, &["convert", "raw", "-o", "bad"]), 1);
    ok(
        p,
        &[
            "convert",
            "raw/grasp01.csv",
            "--outcome",
            "success",
            "--direction",
            "back",
            "-o",
            "flags",
        ],
    );
    assert!(p.join("flags/grasp01.trace").is_file());
}

#[test]
fn train_eval_simulate_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    trained(p);
    let data_before = snapshot(&p.join("data"));

    assert_eq!(
        first_line(&p.join("train/history.csv")),
        "epoch,mean_loss,train_success,val_success"
    );
    let split: Value =
        serde_json::from_str(&fs::read_to_string(p.join("train/split.json")).unwrap()).unwrap();
    assert_eq!(split["channels"], serde_json::json!([0, 1, 2, 3]));

    let summary = ok(
        p,
        &[
            "eval",
            "--checkpoint",
            "train/model.ckpt",
            "--data",
            "data",
            "--split",
            "train/split.json",
            "-o",
            "eval",
        ],
    );
    assert!(summary.contains("Success rate"), "{summary}");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(p.join("eval/report.json")).unwrap()).unwrap();
    let rate = report[0]["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(first_line(&p.join("eval/predictions.csv")).contains("p_unstable"));

    let trace = fs::read_dir(p.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|x| x.extension().is_some_and(|e| e == "trace"))
        .unwrap();
    let trace = trace.to_str().unwrap();
    ok(
        p,
        &[
            "simulate",
            "--checkpoint",
            "train/model.ckpt",
            "--trace",
            trace,
            "-o",
            "sim",
        ],
    );
    assert_eq!(
        first_line(&p.join("sim/stream.csv")),
        "step,channel,force,p_unstable,label"
    );
    let latency: Value =
        serde_json::from_str(&fs::read_to_string(p.join("sim/latency.json")).unwrap()).unwrap();
    assert_eq!(latency["sensors"], 4, "model channels are the default");
    assert!(fs::read_to_string(p.join("sim/events.jsonl"))
        .unwrap()
        .lines()
        .all(|l| serde_json::from_str::<Value>(l).is_ok()));

    // A budget nobody can meet: reported, and fatal only when strict.
    let tight = [
        "simulate",
        "--checkpoint",
        "train/model.ckpt",
        "--trace",
        trace,
        "--budget-us",
        "0.000001",
    ];
    ok(p, &[&tight[..], &["-o", "loose"]].concat());
    let strict = grasp(
        p,
        &[&tight[..], &["--strict-latency", "-o", "strict"]].concat(),
    );
    assert_eq!(strict.status.code(), Some(3));
    assert!(p.join("strict/latency.json").is_file());

    assert_eq!(snapshot(&p.join("data")), data_before, "inputs untouched");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(p, &["gen-data", "--n-sets", "6", "-o", "data"]);
    assert_eq!(code(p, &["no-such-command"]), 1);
    assert_eq!(code(p, &["train", "--data", "missing", "-o", "t"]), 1);
    assert_eq!(
        code(
            p,
            &["train", "--data", "data", "--model", "nope", "-o", "t2"]
        ),
        1
    );
    assert_eq!(code(p, &["--jobs", "0", "gen-data", "-o", "j"]), 1);
    assert_eq!(
        code(
            p,
            &["train", "--data", "data", "--channels", "3,3", "-o", "t3"]
        ),
        1
    );
    assert_eq!(code(p, &["--help"]), 0);
    // Output directory may not swallow an input.
    assert_eq!(
        code(p, &["--force", "train", "--data", "data", "-o", "data"]),
        1
    );
    let diverged = code(
        p,
        &[
            "train",
            "--data",
            "data",
            "--model",
            "lstm",
            "--hidden",
            "4",
            "--epochs",
            "2",
            "--lr",
            "1e308",
            "--no-clip",
            "--channels",
            "0",
            "-o",
            "div",
        ],
    );
    assert_eq!(diverged, 2);
}

#[test]
fn grad_check_command() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(
        p,
        &[
            "grad-check",
            "--models",
            "lstm,data-stft-lstm",
            "--instances",
            "3",
            "-o",
            "gc",
        ],
    );
    let csv = fs::read_to_string(p.join("gc/gradcheck.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "model,instance,seed,max_rel_error,pass"
    );
    assert_eq!(csv.lines().count(), 7);
    // An impossible tolerance is a numeric failure.
    let strict = code(
        p,
        &[
            "grad-check",
            "--models",
            "lstm",
            "--instances",
            "1",
            "--tolerance",
            "0",
            "-o",
            "gc0",
        ],
    );
    assert_eq!(strict, 2);
}

#[test]
fn experiment_and_cross_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(p, &["gen-data", "--n-sets", "18", "-o", "data"]);
    let common = ["--hidden", "4", "--epochs", "1", "--channels", "0,9"];
    ok(
        p,
        &[
            &[
                "--seed",
                "2",
                "experiment",
                "--data",
                "data",
                "--models",
                "lstm,nb",
                "--seeds",
                "1,2",
            ][..],
            &common[..],
            &["-o", "exp"],
        ]
        .concat(),
    );
    let files = snapshot(&p.join("exp"));
    assert!(
        files.keys().any(|k| k.contains("aggregate")),
        "{:?}",
        files.keys()
    );
    ok(
        p,
        &[
            &["cross-eval", "--data", "data", "--model", "lstm"][..],
            &common[..],
            &["-o", "cross"],
        ]
        .concat(),
    );
    assert_eq!(
        first_line(&p.join("cross/cross.csv")),
        "train,test,success_rate,ahead_drop_rate,n_steps"
    );
}
