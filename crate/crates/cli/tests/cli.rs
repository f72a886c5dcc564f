use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cnwf::forward::load_dataset;
use cnwf::mesh::load_mesh;

const SMALL: &str = r#"
[mesh]
h = 0.15
[training]
cache = 8
steps = 12
batch = 4
log_every = 4
checkpoint_every = 5
[eval]
samples = 3
sweep = [4, 5]
[coverage]
trials = 2
iterations = 2
inner = 2
[output]
dir = "run"
"#;

fn cnwf(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnwf"))
        .args(args)
        .env("CNWF_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.display().to_string();
    (dir, c)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn mesh_is_deterministic_and_close_to_the_disk() {
    let (dir, c) = setup();
    let a = cnwf(dir.path(), &["-c", &c, "--set", "mesh.h=0.05", "mesh"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let first = fs::read(dir.path().join("run/mesh.txt")).unwrap();
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "--set", "mesh.h=0.05", "mesh"])), 0);
    assert_eq!(first, fs::read(dir.path().join("run/mesh.txt")).unwrap());
    let mesh = load_mesh(dir.path().join("run/mesh.txt")).unwrap();
    // inscribed polygon area deficit is O(h²)
    let area = mesh.total_area();
    assert!(area < std::f64::consts::PI && area > std::f64::consts::PI - 0.01, "{area}");
    assert!(dir.path().join("run/mesh_manifest.json").is_file());
}

#[test]
fn invalid_mesh_file_reports_the_line() {
    let (dir, c) = setup();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "3 1\n0 0\n1 0\n").unwrap();
    let o = cnwf(dir.path(), &["-c", &c, "mesh", "--validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_configuration_exits_with_one() {
    let (dir, c) = setup();
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "--set", "training.lr=-1", "datagen"])), 1);
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "--set", "mesh.kind=\"file\"", "datagen"])), 1);
}

#[test]
fn datagen_is_exact_and_idempotent() {
    let (dir, c) = setup();
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "-j", "3", "datagen"])), 0);
    let data = dir.path().join("run/data");
    let (m, samples) = load_dataset(&data).unwrap();
    assert_eq!(samples.len(), 8);
    let mesh = cnwf::mesh::generate_disk_mesh(1.0, 0.15).unwrap();
    for s in &samples {
        for (p, u) in s.observation.positions.iter().zip(&s.observation.u) {
            assert_eq!(mesh.interpolate(&s.field, *p).unwrap(), *u);
        }
    }
    let stamp = fs::metadata(data.join("sample_00000.bin")).unwrap().modified().unwrap();
    // single-threaded rerun finds the same dataset and leaves it alone
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "datagen"])), 0);
    assert_eq!(fs::metadata(data.join("sample_00000.bin")).unwrap().modified().unwrap(), stamp);
    assert_eq!(load_dataset(&data).unwrap().0, m);
}

#[test]
fn interrupted_training_resumes_exactly() {
    let (dir, c) = setup();
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "train"])), 0);
    let set = ["--set", "output.dir=\"split\""];
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, set[0], set[1], "--set", "training.steps=5", "train"])), 0);
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, set[0], set[1], "train", "--resume"])), 0);
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join("train/cnwf").join(f)).unwrap();
    assert_eq!(read("run", "latest.bin"), read("split", "latest.bin"));
    assert_eq!(read("run", "log.jsonl"), read("split", "log.jsonl"));
    // changing the batch size is not a continuation
    let o = cnwf(dir.path(), &["-c", &c, set[0], set[1], "--set", "training.batch=2", "train", "--resume"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_check_exits_with_three() {
    let (dir, c) = setup();
    // a dozen steps cannot halve the loss
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "train", "--check"])), 3);
    assert!(dir.path().join("run/train/cnwf/summary.json").is_file());
}

#[test]
fn evaluation_and_coverage_reports() {
    let (dir, c) = setup();
    let o = cnwf(dir.path(), &["-c", &c, "eval", "--oracle", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run/eval_oracle.json")).unwrap()).unwrap();
    for e in report["sweep"].as_array().unwrap() {
        assert!(e["max_consistency"].as_f64().unwrap() <= 1e-8);
    }
    assert_eq!(report["reference"][0]["w2_initial"].as_f64(), Some(2.20e-3));

    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "train", "--baseline", "mlp"])), 0);
    let ck = dir.path().join("run/train/mlp/latest.json");
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "eval", "--checkpoint", ck.to_str().unwrap()])), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run/eval_mlp.json")).unwrap()).unwrap();
    let sweep = report["sweep"].as_array().unwrap();
    assert_eq!(sweep[0]["supported"], false);
    assert!(sweep[1]["mean_sinkhorn"].as_f64().unwrap() > 0.0);

    let o = cnwf(dir.path(), &["-c", &c, "-j", "2", "coverage", "--mode", "oracle", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/coverage_oracle/trial_00.csv")).unwrap();
    assert!(csv.starts_with("k,inner_iter,sensor_id,x,y,J_model,J_true"));
    assert!(dir.path().join("run/coverage_oracle/trial_00_tracks.svg").is_file());
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "coverage", "--mode", "model"])), 1);
}

#[test]
fn bump_mode_needs_a_convex_domain() {
    let (dir, c) = setup();
    assert_eq!(code(&cnwf(dir.path(), &["-c", &c, "--set", "mesh.kind=\"l\"", "coverage", "--mode", "bump"])), 1);
}
