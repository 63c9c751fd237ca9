use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fidforce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fidforce")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fidforce(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn noiseless_config(dir: &Path, duration_s: f64) -> PathBuf {
    write(dir, "geometry.json", r#"{"quantization": null}"#);
    let traj = format!(
        r#"{{"kind": "compound", "duration_s": {duration_s}, "waypoint_dt_s": 0.01,
            "amplitude": [1.0, 1.0, 0.25, 20.0, 20.0, 1.0],
            "tones": [[{{"freq_hz": 0.05, "weight": 0.7}}, {{"freq_hz": 0.117, "weight": 0.3}}],
                      [{{"freq_hz": 0.067, "weight": 0.7}}, {{"freq_hz": 0.133, "weight": 0.3}}],
                      [{{"freq_hz": 0.083, "weight": 0.7}}, {{"freq_hz": 0.15, "weight": 0.3}}],
                      [{{"freq_hz": 0.058, "weight": 0.7}}, {{"freq_hz": 0.142, "weight": 0.3}}],
                      [{{"freq_hz": 0.075, "weight": 0.7}}, {{"freq_hz": 0.125, "weight": 0.3}}],
                      [{{"freq_hz": 0.092, "weight": 0.7}}, {{"freq_hz": 0.108, "weight": 0.3}}]]}}"#
    );
    write(
        dir,
        "run.json",
        &format!(r#"{{"geometry_path": "geometry.json", "seed": 5, "jitter_fraction": 0.0, "alpha": 1.0, "trajectory": {traj}}}"#),
    )
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--seed", "42", "--out-dir", p(&a)]);
    ok(&["simulate", "--seed", "42", "--out-dir", p(&b)]);
    for name in ["truth.csv", "detections.csv", "simulation.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = tmp.path().join("c");
    ok(&["simulate", "--seed", "43", "--out-dir", p(&c)]);
    assert_ne!(fs::read(a.join("detections.csv")).unwrap(), fs::read(c.join("detections.csv")).unwrap());
}

#[test]
fn default_run_gives_about_1500_frames() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--seed", "1", "--out-dir", p(tmp.path())]);
    let summary = json(&tmp.path().join("simulation.json"));
    let frames = summary["frames"].as_u64().unwrap();
    assert!((1490..=1510).contains(&frames), "{frames}");
    let rows = fs::read_to_string(tmp.path().join("detections.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows as u64, summary["detection_rows"].as_u64().unwrap());
    assert_eq!(rows as u64, 2 * frames - summary["dropouts"].as_u64().unwrap());
}

#[test]
fn zero_amplitude_gives_constant_rows() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "geometry.json", r#"{"quantization": {"d_r": 0.25}}"#);
    let cfg = write(
        tmp.path(),
        "run.json",
        r#"{"geometry_path": "geometry.json", "seed": 9, "trajectory": {"kind": "waypoints", "points": [[0,0,0,0,0,0,0],[5,0,0,0,0,0,0]]}}"#,
    );
    ok(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    let text = fs::read_to_string(tmp.path().join("detections.csv")).unwrap();
    let mut per_tag: std::collections::BTreeMap<String, std::collections::BTreeSet<String>> = Default::default();
    for line in text.lines().skip(1) {
        let (_, rest) = line.split_once(',').unwrap();
        let (tag, corners) = rest.split_once(',').unwrap();
        per_tag.entry(tag.to_string()).or_default().insert(corners.to_string());
    }
    assert_eq!(per_tag.len(), 2);
    assert!(per_tag.values().all(|s| s.len() == 1), "{per_tag:?}");
}

#[test]
fn noiseless_calibration_and_training_evaluation_agree() {
    let tmp = TempDir::new().unwrap();
    let cfg = noiseless_config(tmp.path(), 30.0);
    let d = tmp.path();
    ok(&["simulate", "--config", p(&cfg), "--out-dir", p(d)]);
    let det = d.join("detections.csv");
    let truth = d.join("truth.csv");
    ok(&["calibrate", "--config", p(&cfg), "--detections", p(&det), "--truth", p(&truth), "--out-dir", p(d)]);
    let report = json(&d.join("calibration_report.json"));
    for axis in ["fx", "fy", "fz", "mx", "my", "mz"] {
        let r2 = report["r_squared"][axis].as_f64().unwrap();
        assert!((r2 - 1.0).abs() <= 1e-9, "{axis}: {r2}");
    }
    let model = d.join("model.json");
    let ev_dir = d.join("eval");
    ok(&["evaluate", "--config", p(&cfg), "--model", p(&model), "--detections", p(&det), "--truth", p(&truth), "--out-dir", p(&ev_dir)]);
    let ev = json(&ev_dir.join("evaluation.json"));
    assert_eq!(ev["r_squared"], report["r_squared"]);
    let scatter = fs::read_to_string(ev_dir.join("scatter_mz.csv")).unwrap();
    assert!(scatter.starts_with("truth,predicted\n"));
    assert_eq!(scatter.lines().count() as u64 - 1, ev["samples"].as_u64().unwrap());
}

#[test]
fn evaluate_reports_held_out_seed() {
    let tmp = TempDir::new().unwrap();
    let (train, test) = (tmp.path().join("train"), tmp.path().join("test"));
    ok(&["simulate", "--seed", "11", "--out-dir", p(&train)]);
    ok(&["simulate", "--seed", "12", "--out-dir", p(&test)]);
    ok(&[
        "calibrate",
        "--detections",
        p(&train.join("detections.csv")),
        "--truth",
        p(&train.join("truth.csv")),
        "--out-dir",
        p(&train),
    ]);
    let stdout = ok(&[
        "evaluate",
        "--model",
        p(&train.join("model.json")),
        "--detections",
        p(&test.join("detections.csv")),
        "--truth",
        p(&test.join("truth.csv")),
        "--out-dir",
        p(&test),
    ]);
    assert!(stdout.contains("R2"));
    let ev = json(&test.join("evaluation.json"));
    assert!(ev["r_squared"]["fx"].as_f64().unwrap() > 0.99);
}

#[test]
fn missing_truth_column_is_a_schema_error() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--seed", "3", "--out-dir", p(tmp.path())]);
    let truth = fs::read_to_string(tmp.path().join("truth.csv")).unwrap();
    let cut: String = truth
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(5);
            f.join(",") + "\n"
        })
        .collect();
    let bad = write(tmp.path(), "bad_truth.csv", &cut);
    let out = fidforce(&["calibrate", "--detections", p(&tmp.path().join("detections.csv")), "--truth", p(&bad), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error code=schema:"), "{err}");
    assert!(err.contains("`my`"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn empty_detections_are_rejected() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--seed", "3", "--out-dir", p(tmp.path())]);
    ok(&[
        "calibrate",
        "--detections",
        p(&tmp.path().join("detections.csv")),
        "--truth",
        p(&tmp.path().join("truth.csv")),
        "--out-dir",
        p(tmp.path()),
    ]);
    let empty = write(tmp.path(), "empty.csv", "timestamp_s,tag_id,x0,y0,x1,y1,x2,y2,x3,y3\n");
    let out = fidforce(&[
        "evaluate",
        "--model",
        p(&tmp.path().join("model.json")),
        "--detections",
        p(&empty),
        "--truth",
        p(&tmp.path().join("truth.csv")),
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data rows"));
}

#[test]
fn constant_loading_gives_unreliable_lag() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.json",
        r#"{"seed": 2, "trajectory": {"kind": "waypoints", "points": [[0,0,0,0,0,0,0],[30,0,0,0,0,0,0]]}}"#,
    );
    ok(&["simulate", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    let out = fidforce(&[
        "calibrate",
        "--detections",
        p(&tmp.path().join("detections.csv")),
        "--truth",
        p(&tmp.path().join("truth.csv")),
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error code=unreliable_lag:"));
}

#[test]
fn analyze_writes_report_and_rejects_bad_json() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(&["analyze", "--out-dir", p(tmp.path())]);
    assert!(stdout.contains("l_chord"));
    let rep = json(&tmp.path().join("sensitivity_report.json"));
    assert_eq!(rep["resolution"]["r_y"], 10);
    assert_eq!(rep["resolution"]["r_x"], 11);

    let bad = write(tmp.path(), "geometry.json", "{\"analysis\": {\"w_frame\": 640,,}}");
    let out = fidforce(&["analyze", "--geometry", p(&bad), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));

    let zero = write(tmp.path(), "zero.json", r#"{"analysis": {"w_frame": 640, "h_frame": 480, "w_img": 150, "h_img": 240, "w_tag_mm": 4.5, "d_tag_mm": 21, "quantization": {"d_r": 0}}}"#);
    assert_eq!(fidforce(&["analyze", "--geometry", p(&zero), "--out-dir", p(tmp.path())]).status.code(), Some(2));
}

#[test]
fn bandwidth_writes_measurement() {
    let tmp = TempDir::new().unwrap();
    for fps in ["25", "33", "15"] {
        ok(&["bandwidth", "--true-fps", fps, "--out-dir", p(tmp.path())]);
        let m = json(&tmp.path().join("bandwidth.json"));
        let measured = m["measurement"]["fps"].as_f64().unwrap();
        assert!((measured - fps.parse::<f64>().unwrap()).abs() <= 1.0, "{fps}: {measured}");
    }
    let spec = write(tmp.path(), "src.json", r#"{"true_fps": 25, "buffer_depth": 2, "color": 1}"#);
    assert_eq!(fidforce(&["bandwidth", "--spec", p(&spec), "--out-dir", p(tmp.path())]).status.code(), Some(2));
}

#[test]
fn simulate_requires_seed() {
    let tmp = TempDir::new().unwrap();
    let out = fidforce(&["simulate", "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_reproduce_defaults() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", p(&configs.join("run.json")), "--out-dir", p(&a)]);
    ok(&["simulate", "--seed", "42", "--out-dir", p(&b)]);
    assert_eq!(fs::read(a.join("detections.csv")).unwrap(), fs::read(b.join("detections.csv")).unwrap());
    ok(&["bandwidth", "--spec", p(&configs.join("camera.json")), "--out-dir", p(&a)]);
    ok(&["analyze", "--config", p(&configs.join("run.json")), "--out-dir", p(&a)]);
}
