use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcast")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_code(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("ERROR:")).unwrap_or_else(|| panic!("no error line in {err}"));
    line.split(':').nth(1).unwrap().to_string()
}

fn synth_and_train(dir: &Path) {
    ok(&flowcast(dir, &["--seed", "3", "synth", "--scenario", "two-corridor", "--count", "40", "--noise", "0.05", "--kappa", "0.01", "-o", "train.csv"]));
    ok(&flowcast(dir, &["train", "--data", "train.csv", "-o", "model.json"]));
}

#[test]
fn train_is_byte_identical_and_recovers_two_fields() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d);
    let first = fs::read(d.join("model.json")).unwrap();
    ok(&flowcast(d, &["train", "--data", "train.csv", "-o", "again.json"]));
    assert_eq!(first, fs::read(d.join("again.json")).unwrap());

    let out = flowcast(d, &["inspect", "--model", "model.json"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "n=2"), "{text}");
    let model: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let kappa = model["noise"]["kappa"].as_f64().unwrap();
    assert!(text.contains(&format!("kappa={kappa:?}")));
}

#[test]
fn predict_writes_normalized_deterministic_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d);
    let args = |out: &'static str| {
        vec!["predict", "--model", "model.json", "--position", "1.0,10.0", "--velocity", "1.0,0.05", "--n-t", "3", "--raster-nx", "32", "--out-dir", out]
    };
    ok(&flowcast(d, &args("a")));
    ok(&flowcast(d, &args("b")));
    let mut rasters: Vec<_> = fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).filter(|n| n.starts_with("frame_")).collect();
    rasters.sort();
    assert_eq!(rasters.len(), 3);
    for name in &rasters {
        let text = fs::read_to_string(d.join("a").join(name)).unwrap();
        assert_eq!(text, fs::read_to_string(d.join("b").join(name)).unwrap());
        let r = flowcast::forecast::DensityRaster::from_text(&text).unwrap();
        assert_eq!(r.spec.nx, 32);
        assert!((r.total() - 1.0).abs() < 1e-9);
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["forecast"]["raster_nx"], 32);
    assert_eq!(manifest["forecast"]["n_t"], 3);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 3);
}

#[test]
fn evaluate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d);
    ok(&flowcast(d, &["--seed", "8", "synth", "--scenario", "two-corridor", "--count", "4", "--noise", "0.05", "--kappa", "0.01", "-o", "test.csv"]));
    for report in ["r1.txt", "r2.txt"] {
        ok(&flowcast(d, &["--seed", "5", "evaluate", "--model", "model.json", "--test", "test.csv", "--n-t", "5", "--samples", "200", "--report", report]));
    }
    let r1 = fs::read_to_string(d.join("r1.txt")).unwrap();
    assert_eq!(r1, fs::read_to_string(d.join("r2.txt")).unwrap());
    assert!(r1.contains("t,auc_ours,auc_rw,mhd_ours,mhd_rw"));
    assert_eq!(r1.lines().filter(|l| !l.starts_with('#')).count(), 6);
    assert!(d.join("r1.txt.timing.txt").exists());
}

#[test]
fn holdout_writes_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&flowcast(d, &["synth", "--scenario", "crossing", "--count", "30", "-o", "c.csv"]));
    ok(&flowcast(d, &["--seed", "1", "train", "--data", "c.csv", "-o", "m.json", "--holdout", "0.2", "--fold", "1"]));
    let ids = fs::read_to_string(d.join("m.json.holdout.txt")).unwrap();
    assert_eq!(ids.lines().count(), 6);
}

#[test]
fn synth_scenarios_have_expected_kinematics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&flowcast(d, &["synth", "--scenario", "straight-corridor", "--count", "5", "-o", "s.csv"]));
    ok(&flowcast(d, &["synth", "--scenario", "circle", "--count", "5", "--frame-dt", "0.05", "-o", "c.csv"]));
    let load = |name: &str| {
        let f = fs::File::open(d.join(name)).unwrap();
        flowcast::ingest::parse_annotations(std::io::BufReader::new(f), flowcast::ingest::AnnotationFormat::SimpleCsv).unwrap().trajectories
    };
    for tr in load("s.csv") {
        for w in tr.samples().windows(2) {
            assert!((w[1].p.y - w[0].p.y).abs() < 1e-9);
        }
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("c.csv.truth.json")).unwrap()).unwrap();
    let speeds = truth["speeds"].as_array().unwrap();
    for (tr, s) in load("c.csv").iter().zip(speeds) {
        let s = s.as_f64().unwrap();
        let c = flowcast::Vec2::new(10.0, 10.0);
        let r0 = (tr.first().p - c).norm();
        for p in tr.positions() {
            assert!(((p - c).norm() - r0).abs() < 1e-6);
        }
        assert!(s > 0.0);
    }
}

#[test]
fn inspect_exports_angle_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d);
    ok(&flowcast(d, &["inspect", "--model", "model.json", "--angle-raster", "angles", "--grid", "8"]));
    let text = fs::read_to_string(d.join("angles/angle_0.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 8);
}

#[test]
fn errors_are_machine_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "agent_id,t,x,y\n").unwrap();
    let out = flowcast(d, &["train", "--data", "empty.csv", "-o", "m.json"]);
    assert_eq!(error_code(&out), "data");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no usable trajectories"));

    let out = flowcast(d, &["synth", "--scenario", "spiral", "--count", "3", "-o", "x.csv"]);
    assert_eq!(error_code(&out), "usage");
    assert!(String::from_utf8_lossy(&out.stderr).contains("two-corridor"));

    fs::write(d.join("bad.json"), "{\"schema_version\": 7}").unwrap();
    assert_eq!(error_code(&flowcast(d, &["inspect", "--model", "bad.json"])), "model");
    assert_eq!(error_code(&flowcast(d, &["inspect", "--model", "missing.json"])), "io");
    assert_eq!(error_code(&flowcast(d, &["predict", "--model", "bad.json"])), "usage");

    synth_and_train(d);
    let out = flowcast(d, &["predict", "--model", "model.json", "--position", "nan,1", "--velocity", "0,0", "--out-dir", "o"]);
    assert_eq!(error_code(&out), "input");

    fs::write(d.join("cfg.toml"), "[forecast]\nbogus = 1\n").unwrap();
    assert_eq!(error_code(&flowcast(d, &["--config", "cfg.toml", "inspect", "--model", "model.json"])), "input");
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d);
    fs::write(d.join("cfg.toml"), "[forecast]\nn_t = 2\nraster_nx = 16\nraster_ny = 16\n").unwrap();
    ok(&flowcast(d, &["--config", "cfg.toml", "predict", "--model", "model.json", "--position", "1,10", "--velocity", "1,0", "--raster-ny", "8", "--out-dir", "o"]));
    let r = flowcast::forecast::DensityRaster::from_text(&fs::read_to_string(d.join("o/frame_0002.txt")).unwrap()).unwrap();
    assert_eq!((r.spec.nx, r.spec.ny), (16, 8));
    assert!(!d.join("o/frame_0003.txt").exists());
}
