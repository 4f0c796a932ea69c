use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pc2im(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pc2im"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "capacity": 2048,
  "layers": [
    {"type": "psa", "samples_per_tile": 64, "radius_r": 6554, "max_neighbors_k": 8, "mlp_dims": [8], "weight_seed": 1},
    {"type": "psa", "samples_per_tile": 16, "radius_r": 13107, "max_neighbors_k": 8, "mlp_dims": [8], "weight_seed": 2},
    {"type": "pfp", "k": 3, "mlp_dims": [4], "weight_seed": 3}
  ]
}"#;

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    let b = dir.path().join("b.xyz");
    for out in [&a, &b] {
        let o = pc2im(&[
            "gen",
            "--kind",
            "uniform",
            "--n",
            "16384",
            "--seed",
            "1",
            "--out",
            p(out),
        ]);
        assert_eq!(code(&o), 0);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 16384);
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let bin = dir.path().join("c.bin");
    assert_eq!(code(&pc2im(&["gen", "--n", "10", "--out", p(&bin)])), 0);
    assert_eq!(fs::metadata(&bin).unwrap().len(), 120);
}

#[test]
fn gen_rejects_zero_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = pc2im(&["gen", "--n", "0", "--out", p(&dir.path().join("x.xyz"))]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn partition_reports_tiles() {
    let o = pc2im(&["partition", "uniform:9000", "--capacity", "1000"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let sizes: Vec<u64> = v["tile_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.iter().sum::<u64>(), 9000);
    assert!(sizes.iter().all(|&s| s <= 1000));
    assert!(v["tree"]["node"].is_object());
}

#[test]
fn sample_compare_exact_and_determinism() {
    let args = ["sample", "uniform:2048", "--m", "32", "--compare-exact"];
    let a = pc2im(&args);
    assert_eq!(code(&a), 0);
    let b = pc2im(&args);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let tile = &v["tiles"][0];
    assert_eq!(tile["centroids"].as_array().unwrap().len(), 32);
    let q = &tile["quality"];
    assert!(q["lattice_recall"].as_f64().unwrap() > 0.9);
    assert!(q["coverage_ratio"].as_f64().unwrap() > 0.0);
    assert!(String::from_utf8_lossy(&a.stderr).contains("lattice recall"));
}

#[test]
fn sample_rejects_oversized_m() {
    let o = pc2im(&["sample", "uniform:100", "--m", "101"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("net.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let cloud = dir.path().join("cloud.xyz");
    assert_eq!(
        code(&pc2im(&["gen", "--n", "16384", "--out", p(&cloud)])),
        0
    );
    let out = dir.path().join("sim.json");
    let o = pc2im(&[
        "simulate",
        p(&cloud),
        "--config",
        p(&cfg),
        "--baselines",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["tiles"].as_array().unwrap().len(), 8);
    for stage in ["load", "preprocess", "feature"] {
        assert!(
            v["report"]["stages"][stage]["energy_pj"]["total"]
                .as_f64()
                .unwrap()
                > 0.0
        );
    }
    assert_eq!(
        v["baselines"]["feature_cycle_ratio"].as_f64().unwrap(),
        0.25
    );

    let seq = dir.path().join("seq.json");
    let o = pc2im(&[
        "simulate",
        p(&cloud),
        "--config",
        p(&cfg),
        "--baselines",
        "--threads",
        "1",
        "--out",
        p(&seq),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&seq).unwrap(), fs::read(&out).unwrap());

    let csv = dir.path().join("r.csv");
    let o = pc2im(&["report", p(&out), "--out", p(&csv)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("preprocess"));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn simulate_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("net.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let o = pc2im(&[
        "simulate",
        "uniform:3000",
        "--config",
        p(&cfg),
        "--capacity",
        "1024",
        "--energy",
        "dram_pj_per_bit=9",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tiles"].as_array().unwrap().len(), 4);
    assert_eq!(
        v["report"]["config"]["dram_pj_per_bit"].as_f64().unwrap(),
        9.0
    );
    let bad = pc2im(&[
        "simulate",
        "uniform:100",
        "--config",
        p(&cfg),
        "--energy",
        "nope=1",
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn simulate_missing_input_is_io_error() {
    let o = pc2im(&["simulate", "/nonexistent/cloud.xyz"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cloud.xyz"));
}

#[test]
fn verify_mac_passes_and_detects_faults() {
    let o = pc2im(&["verify-mac", "--rand-n", "10"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("65536/65536 fused-add identities"));
    assert!(text.contains("10/10 MACs exact"));
    let bad = pc2im(&["verify-mac", "--rand-n", "10", "--inject-fault"]);
    assert_eq!(code(&bad), 3);
}

#[test]
fn verify_mac_default_suite() {
    let o = pc2im(&["verify-mac"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("100000/100000 MACs exact"));
}
