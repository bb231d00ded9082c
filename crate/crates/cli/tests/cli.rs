use std::path::Path;
use std::process::{Command, Output};

const IDENTITY: &str = r#"{"r":[1,0,0,0,1,0,0,0,1],"t":[0,0,3]}"#;

fn posecheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posecheck")).args(args).output().unwrap()
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn small(dir: &Path) -> String {
    config(
        dir,
        r#"{"object":{"toy":"bar2","samples":500},"dataset":{"per_class":6},"validation_per_class":4,"seed":3}"#,
    )
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn identical_poses_are_at_distance_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let o = posecheck(&["distance", "--config", &cfg, "--a", IDENTITY, "--b", IDENTITY]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o), "0.0\nvalid (< 10% diameter)\n");
}

#[test]
fn half_turn_of_a_two_fold_object_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let turned = r#"{"r":[-1,0,0,0,-1,0,0,0,1],"t":[0,0,3]}"#;
    let o = posecheck(&["distance", "--config", &cfg, "--a", IDENTITY, "--b", turned]);
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().parse::<f64>().unwrap() < 1e-9, "{out}");
    let far = r#"{"r":[1,0,0,0,1,0,0,0,1],"t":[0.5,0,3]}"#;
    let o = posecheck(&["distance", "--config", &cfg, "--a", IDENTITY, "--b", far]);
    assert!(stdout(&o).ends_with("invalid (>= 10% diameter)\n"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"object":{"toy":"bar2"},"learning_rate":0.1}"#);
    let o = posecheck(&["mesh-info", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn toy_with_explicit_symmetry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"object":{"toy":"bar2","symmetry":{"kind":"none"}}}"#);
    assert_eq!(posecheck(&["mesh-info", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn training_without_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    assert_eq!(posecheck(&["train", "--config", &cfg]).status.code(), Some(3));
    assert_eq!(posecheck(&["evaluate", "--config", &cfg]).status.code(), Some(3));
}

#[test]
fn bad_pose_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let skewed = r#"{"r":[1,0,0,0,2,0,0,0,1],"t":[0,0,3]}"#;
    let o = posecheck(&["distance", "--config", &cfg, "--a", IDENTITY, "--b", skewed]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let manifest = dir.path().join("out/data/train/manifest.json");
    assert!(posecheck(&["make-dataset", "--config", &cfg]).status.success());
    let first = std::fs::read(&manifest).unwrap();
    assert!(posecheck(&["make-dataset", "--config", &cfg]).status.success());
    assert_eq!(first, std::fs::read(&manifest).unwrap());
    assert!(posecheck(&["make-dataset", "--config", &cfg, "--seed", "4"]).status.success());
    assert_ne!(first, std::fs::read(&manifest).unwrap());
    assert!(dir.path().join("out/data/config.resolved.json").exists());
}

#[test]
fn mesh_info_reports_a_consistent_symmetry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"object":{"toy":"cross4","samples":400}}"#);
    let o = posecheck(&["mesh-info", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("symmetry: cyclic order 4"));
    let info: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/mesh/info.json")).unwrap()).unwrap();
    assert_eq!(info["symmetry_consistent"], true);
}

#[test]
fn render_writes_depth_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let o = posecheck(&["render", "--config", &cfg, "--pose", IDENTITY, "--out", "view"]);
    assert!(o.status.success(), "{o:?}");
    let dpr = std::fs::read(dir.path().join("view.dpr")).unwrap();
    assert_eq!(&dpr[..4], b"DPR1");
    assert!(dir.path().join("view.pgm").exists());
}

#[test]
fn report_merges_row_lists() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.json");
    std::fs::write(
        &rows,
        r#"[{"name":"a","aca":90.0,"oa":95.0,"ap_before":null,"ap_after":null},
            {"name":"b","aca":80.0,"oa":85.0,"ap_before":null,"ap_after":null}]"#,
    )
    .unwrap();
    let out = dir.path().join("rep");
    let o = posecheck(&["report", "--input", rows.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["average"]["aca"], 85.0);
    assert_eq!(rep["average"]["oa"], 90.0);
}
