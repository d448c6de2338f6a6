use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn koopman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman")).args(args).output().expect("run koopman")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the duffing config with `edit` applied and returns its path.
fn config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let text = std::fs::read_to_string(root().join("configs/duffing.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["paths"]["out"] = serde_json::Value::Null;
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_expected_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |v| {
        v["generate"]["trials"] = 2.into();
        v["generate"]["duration"] = 120.0.into();
    });
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = koopman(&["generate", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for i in 0..2 {
        let name = format!("data/trial_{i:02}.csv");
        let text = std::fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(text.lines().count(), 6001 + 1);
        assert_eq!(text, std::fs::read_to_string(b.join(&name)).unwrap());
    }
    assert!(a.join("data/manifest.json").exists());
}

#[test]
fn seed_override_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |v| v["generate"]["duration"] = 20.0.into());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(koopman(&["generate", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(koopman(&["generate", "--config", s(&cfg), "--out", s(&b), "--seed", "99"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("data/trial_00.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Box<dyn FnOnce(&mut serde_json::Value)>> = vec![
        Box::new(|v| v["generate"]["duration"] = 0.0.into()),
        Box::new(|v| v["unexpected"] = true.into()),
        Box::new(|v| {
            v.as_object_mut().unwrap().remove("version");
        }),
    ];
    for edit in cases {
        let cfg = config(dir.path(), edit);
        let o = koopman(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
    let o = koopman(&["generate", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_with_3_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |_| {});
    let missing = dir.path().join("nope.csv");
    let o = koopman(&["identify", "--config", s(&cfg), "--out", s(&dir.path().join("out")), "--data", s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn pipeline_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let cfg = config(dir.path(), |v| v["paths"]["data"] = serde_json::json!([missing]));
    let o = koopman(&["pipeline", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stage 'identify'"), "{}", stderr(&o));
}

#[test]
fn unexcited_system_is_a_numerical_failure() {
    // Zero initial state and a vanishing input keep the system at rest, so the
    // fitted Koopman matrix is singular and has no logarithm.
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |v| {
        v["excitation"]["lo"] = 0.0.into();
        v["excitation"]["hi"] = 1e-300.into();
        v["generate"]["duration"] = 60.0.into();
        v["generate"]["x0"] = serde_json::json!([0.0, 0.0]);
    });
    let o = koopman(&["pipeline", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(4), "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("more system measurements can be taken"));
}

#[test]
fn identify_and_evaluate_as_separate_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |_| {});
    let out = dir.path().join("out");
    assert!(koopman(&["generate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = koopman(&["identify", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("identify w=3: K = 10000, N = 20"), "{text}");
    assert!(text.contains("identify w=1: K = 10000, N = 4"), "{text}");
    let o = koopman(&["evaluate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for w in [1, 3] {
        assert!(out.join(format!("reports/report_w{w}.json")).exists());
        assert!(out.join(format!("predictions/w{w}/segment_00.csv")).exists());
    }
    let table = std::fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("koopman_w3"), "{table}");
}

#[test]
fn compare_renders_the_fixture_table() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = root().join("fixtures/reference_reports.json");
    let o = koopman(&["compare", s(&fixture), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("Koopman"), "{text}");
    let cols: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(&cols[cols.len() - 2..], ["2.1", "0.5"]);
    let nlarx = text.lines().find(|l| l.starts_with("NLARX")).unwrap();
    assert!(nlarx.trim_end().ends_with("4.8       3.7"), "{nlarx}");
    assert_eq!(std::fs::read_to_string(dir.path().join("comparison.txt")).unwrap().trim_end(), text.trim_end());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn pipeline_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |_| {});
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = koopman(&["pipeline", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["comparison.txt", "comparison.json", "models/model_w3.json", "reports/report_w3.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 20240501);
    assert_eq!(manifest["models"].as_array().unwrap().len(), 2);
}

#[test]
fn shipped_configs_are_valid() {
    let mut count = 0;
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        koopman_cli::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 3);
}
