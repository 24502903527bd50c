use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use whstamp_core::container::{save_container, ParameterSet, Tensor};

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut set = ParameterSet::new();
        let weights: Vec<f32> = (0..60_000).map(|i| (i as f32 * 0.618).sin() * 0.1).collect();
        let bias: Vec<f32> = (0..300).map(|i| (i as f32 * 0.37).cos() * 0.01).collect();
        set.insert("fc.weight", Tensor::from_f32(vec![200, 300], weights).unwrap());
        set.insert("fc.bias", Tensor::from_f32(vec![300], bias).unwrap());
        save_container(&set, dir.path().join("model.bin")).unwrap();
        std::fs::write(dir.path().join("key.hex"), "0f".repeat(32)).unwrap();
        std::fs::write(dir.path().join("payload.txt"), "owner=acme;id=17").unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_whstamp"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("WHSTAMP_THREADS")
            .output()
            .unwrap()
    }

    fn embed(&self) {
        let out = self.run(&[
            "embed", "--model", "model.bin", "--key-file", "key.hex", "--payload", "payload.txt", "--out", "marked.bin",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn verify_exit_codes_follow_the_verdict() {
    let ws = Workspace::new();
    ws.embed();
    let ok = ws.run(&["verify", "--model", "marked.bin", "--key-file", "key.hex", "--json"]);
    assert_eq!(ok.status.code(), Some(0));
    let report = json(&ok);
    assert_eq!(report["verified"], true);
    assert_eq!(report["payload"], hex_of("owner=acme;id=17"));

    let attack = ws.run(&[
        "attack", "--model", "marked.bin", "--key-file", "key.hex", "--mode", "gaussian", "--fraction", "1e-3",
        "--seed", "4", "--out", "attacked.bin", "--json",
    ]);
    assert!(attack.status.success());
    assert_eq!(json(&attack)["modified_count"], 61);
    let tampered = ws.run(&["verify", "--model", "attacked.bin", "--key-file", "key.hex", "--json"]);
    assert_eq!(tampered.status.code(), Some(3));
    assert_eq!(json(&tampered)["verified"], false);

    let unmarked = ws.run(&["verify", "--model", "model.bin", "--key-file", "key.hex"]);
    assert_eq!(unmarked.status.code(), Some(3));
}

fn hex_of(s: &str) -> String {
    s.bytes().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn extract_reports_bit_error_rate_against_reference() {
    let ws = Workspace::new();
    ws.embed();
    let out = ws.run(&[
        "extract", "--model", "marked.bin", "--key-file", "key.hex", "--reference", "payload.txt", "--json",
    ]);
    assert!(out.status.success());
    let report = json(&out);
    assert_eq!(report["ber"], 0.0);
    assert_eq!(report["payload_length"], 16);
    assert_eq!(report["config"]["lsb_bits"], 4);

    let human = ws.run(&["extract", "--model", "marked.bin", "--key-file", "key.hex"]);
    let text = String::from_utf8(human.stdout).unwrap();
    assert!(text.contains("verified: true"));
    assert!(text.contains("payload: owner=acme;id=17"));
}

#[test]
fn usage_errors_exit_with_two() {
    let ws = Workspace::new();
    let missing = ws.run(&["verify", "--model", "model.bin"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--key-file"));

    let bad_width = ws.run(&["verify", "--model", "model.bin", "--key-file", "key.hex", "--lsb-bits", "0"]);
    assert_eq!(bad_width.status.code(), Some(2));

    let no_fraction = ws.run(&[
        "attack", "--model", "model.bin", "--key-file", "key.hex", "--mode", "gaussian", "--out", "x.bin",
    ]);
    assert_eq!(no_fraction.status.code(), Some(2));
    assert!(!ws.path("x.bin").exists());
}

#[test]
fn runtime_errors_exit_with_one() {
    let ws = Workspace::new();
    std::fs::write(ws.path("short.key"), "abcd").unwrap();
    let bad_key = ws.run(&["verify", "--model", "model.bin", "--key-file", "short.key"]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).starts_with("error:"));

    let no_model = ws.run(&["verify", "--model", "absent.bin", "--key-file", "key.hex"]);
    assert_eq!(no_model.status.code(), Some(1));

    let big = "x".repeat(40_000);
    std::fs::write(ws.path("big.txt"), big).unwrap();
    let too_big = ws.run(&[
        "embed", "--model", "model.bin", "--key-file", "key.hex", "--payload", "big.txt", "--out", "o.bin",
    ]);
    assert_eq!(too_big.status.code(), Some(1));
}

#[test]
fn capacity_reports_recommended_payload() {
    let ws = Workspace::new();
    let out = ws.run(&["capacity", "--model", "model.bin", "--json"]);
    assert!(out.status.success());
    let report = json(&out);
    assert_eq!(report["n_params"], 60_300);
    assert_eq!(report["capacity_bits"], 241_200);
    assert_eq!(report["recommended_payload_bits"], 603 - 288);
}

#[test]
fn json_output_and_files_are_reproducible() {
    let ws = Workspace::new();
    ws.embed();
    let first = read(&ws.path("marked.bin"));
    let threaded = ws.run(&[
        "--threads", "1", "embed", "--model", "model.bin", "--key-file", "key.hex", "--payload", "payload.txt",
        "--out", "marked1.bin",
    ]);
    assert!(threaded.status.success());
    assert_eq!(first, read(&ws.path("marked1.bin")));

    let args = ["extract", "--model", "marked.bin", "--key-file", "key.hex", "--json"];
    assert_eq!(ws.run(&args).stdout, ws.run(&args).stdout);
}

#[test]
fn sweep_writes_csv_with_baseline_first() {
    let ws = Workspace::new();
    let config = serde_json::json!({
        "model": "model.bin",
        "key_file": "key.hex",
        "payload_file": "payload.txt",
        "trials": 3,
        "attacks": [
            {"mode": "gaussian", "fraction": 1e-3},
            {"mode": "zero_range", "tensor": "fc.weight", "start": 0, "end": 512},
            {"mode": "replace_value", "tensor": "fc.bias", "start": 10, "end": 20, "value": 0.5}
        ]
    });
    let sub = ws.path("sweeps");
    std::fs::create_dir(&sub).unwrap();
    for name in ["model.bin", "key.hex", "payload.txt"] {
        std::fs::copy(ws.path(name), sub.join(name)).unwrap();
    }
    std::fs::write(sub.join("sweep.json"), config.to_string()).unwrap();

    let run = |threads: &str, csv: &str| {
        let out = ws.run(&["--threads", threads, "sweep", "--config", "sweeps/sweep.json", "--csv", csv]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(read(&ws.path(csv))).unwrap()
    };
    let table = run("1", "a.csv");
    assert_eq!(table, run("4", "b.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "mode,target,seed,modified_count,ber,verified");
    let baseline: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(baseline[0], "none", "{table}");
    assert_eq!(baseline[4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(baseline[5], "true");
    assert_eq!(lines.len(), 1 + 1 + 3 + 2);
    assert!(lines[2..].iter().all(|l| l.ends_with(",false")));

    let out = ws.run(&["sweep", "--config", "sweeps/sweep.json", "--json"]);
    let rows = json(&out)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[1]["seed"], 0);
    assert_eq!(rows[3]["seed"], 2);
}
