use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rehab::metrics::read_metric_records;
use rehab::trainer::pipeline::Artifacts;

const SMALL: &str = r#"
seed = 3
[dataset]
exercises = ["1"]
[dataset.synthetic]
frames = 16
dims = 6
subjects = 3
reps_per_subject = 4
[reduce]
method = "pca"
components = 2
[metric]
kind = "gmm"
[metric.gmm]
components = 2
[model]
part_channels = 2
merge_channels = 2
recurrent_units = [4]
pooled_units = 4
[train]
runs = 2
max_epochs = 3
"#;

fn rehab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rehab"))
        .args(args)
        .arg("--out")
        .arg(dir.join("artifacts"))
        .arg("-q")
        .env_remove("REHAB_ARTIFACTS")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_config(body: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), body).unwrap();
    dir
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rehab(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(rehab(dir.path(), &["report", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        rehab(dir.path(), &["metric", "--metric", "cosine"]).status.code(),
        Some(1)
    );
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = with_config("[train]\nfoo = 1\n");
    let o = rehab(dir.path(), &["--config", "small.toml", "synth"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("foo"));
}

#[test]
fn report_without_artifacts_lists_missing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let o = rehab(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ingest"), "{}", stderr(&o));
}

#[test]
fn stages_name_the_missing_producer() {
    let dir = with_config(SMALL);
    assert!(rehab(dir.path(), &["--config", "small.toml", "synth"]).status.success());
    let o = rehab(dir.path(), &["--config", "small.toml", "score"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rehab metric"), "{}", stderr(&o));
}

#[test]
fn mixture_on_raw_data_is_refused() {
    let dir = with_config(SMALL);
    assert!(rehab(dir.path(), &["--config", "small.toml", "synth"]).status.success());
    let o = rehab(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--reducer",
            "raw",
            "--metric",
            "gmm",
            "metric",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let run = || {
        let dir = with_config(SMALL);
        for cmd in ["synth", "run", "report"] {
            let o = rehab(dir.path(), &["--config", "small.toml", cmd]);
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        }
        let hashes = Artifacts::new(dir.path().join("artifacts")).hashes().unwrap();
        (hashes, dir)
    };
    let (a, dir) = run();
    let (b, _other) = run();
    assert_eq!(a, b);
    for prefix in [
        "dataset/",
        "reducer/",
        "metrics/",
        "gmm/",
        "scores/",
        "checkpoints/",
        "reports/",
    ] {
        assert!(a.keys().any(|k| k.starts_with(prefix)), "no artifacts under {prefix}");
    }
    assert!(a.keys().any(|k| k.ends_with(".svg")));

    let metrics = dir.path().join("artifacts/metrics");
    let csv = fs::read_dir(&metrics)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    let records = read_metric_records(&csv).unwrap();
    assert_eq!(records.len(), 24);
    assert!(records.iter().all(|r| r.value.is_finite()));
}

#[test]
fn table_accepts_explicit_code_dimensions() {
    let dir = with_config(&format!(
        "{SMALL}\n[table]\nreducers = [\"raw\", \"pca(3)\"]\nmetrics = [\"euclidean\", \"dtw\"]\n"
    ));
    assert!(rehab(dir.path(), &["--config", "small.toml", "synth"]).status.success());
    let o = rehab(dir.path(), &["--config", "small.toml", "table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("artifacts/reports/separation.csv")).unwrap();
    assert!(csv.contains("pca(3)"), "{csv}");
    assert!(!csv.contains("pca(2)"));
}
