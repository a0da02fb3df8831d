use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn shapescape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapescape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.display().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_ids(path: &Path) -> (String, Vec<usize>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let ids = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    (header, ids)
}

#[test]
fn run_dido_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "dido.json",
        r#"{"experiment": "dido", "seed": 1, "num_shapes": 6, "n_points": 32}"#,
    );
    let out = shapescape(&["run", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let (header, ids) = csv_ids(&out_dir.join("embedding.csv"));
    assert_eq!(header, "id,c1,c2");
    assert_eq!(ids, (0..6).collect::<Vec<_>>());
    let (header, ids) = csv_ids(&out_dir.join("landscape.csv"));
    assert_eq!(header, "id,c1,c2,f");
    assert_eq!(ids, (0..6).collect::<Vec<_>>());

    let report = read_json(&out_dir.join("report.json"));
    for key in ["experiment", "seed", "pass", "details", "runtimes_ms", "solver_stats"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report["generator"]["name"].is_string());
    assert!(report["generator"]["version"].is_string());
    assert_eq!(report["experiment"], "dido");

    let shapes = read_json(&out_dir.join("shapes.json"));
    assert_eq!(shapes.as_array().map(Vec::len), Some(6));
    let spectrum = read_json(&out_dir.join("spectrum.json"));
    assert!(spectrum["spectrum"].is_array());
}

#[test]
fn cone_writes_one_directory_per_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cone.json",
        &format!(
            r#"{{"experiment": "cone", "num_shapes": 5, "n_points": 24,
                "epsilon": [0, 0.1], "output_dir": "{}"}}"#,
            dir.path().join("cone").display()
        ),
    );
    let out = shapescape(&["run", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("cone");
    assert!(root.join("report.json").is_file());
    let subdirs: Vec<_> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(subdirs.len(), 2);
    for sub in subdirs {
        let (_, ids) = csv_ids(&sub.join("landscape.csv"));
        assert_eq!(ids.len(), 5);
    }
}

#[test]
fn generate_shapes_writes_only_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "shapes.json",
        r#"{"experiment": "cone", "num_shapes": 4, "n_points": 16}"#,
    );
    let out_dir = dir.path().join("s");
    let out = shapescape(&["generate-shapes", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let names: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, ["shapes.json"]);
}

#[test]
fn validation_commands_report_status() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("v");
    let out_dir = out_dir.to_str().unwrap();
    let div = write_config(
        dir.path(),
        "div.json",
        r#"{"experiment": "validate_divergence_bound", "num_shapes": 2, "n_points": 20}"#,
    );
    let out = shapescape(&["validate", "divergence-bound", &div, "--output-dir", out_dir]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS "));

    let emb = write_config(
        dir.path(),
        "emb.json",
        r#"{"experiment": "validate_embedding_bound", "num_shapes": 6, "n_points": 20}"#,
    );
    let out = shapescape(&["validate", "embedding-bound", &emb, "--output-dir", out_dir]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("PASS ") || stdout.starts_with("SKIP "), "{stdout}");
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        dir.path(),
        "unknown.json",
        r#"{"experiment": "dido", "colour": "red"}"#,
    );
    let out = shapescape(&["run", &unknown]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let wrong_kind = write_config(
        dir.path(),
        "kind.json",
        r#"{"experiment": "validate_embedding_bound", "num_shapes": 4, "n_points": 10}"#,
    );
    assert_eq!(code(&shapescape(&["run", &wrong_kind])), 1);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&shapescape(&["run", missing.to_str().unwrap()])), 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&shapescape(&["frobnicate"])), 1);
    assert_eq!(code(&shapescape(&[])), 1);
    assert_eq!(code(&shapescape(&["--help"])), 0);
    assert_eq!(code(&shapescape(&["validate", "--help"])), 0);
}

#[test]
fn solver_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tight.json",
        r#"{"experiment": "dido", "num_shapes": 3, "n_points": 40, "epsilon": 0.001,
            "solver": {"max_iterations": 1}}"#,
    );
    let out = shapescape(&["run", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
