mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{write_config, SMALL_CONFIG};

fn clairvoyance(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clairvoyance")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stages(dir: &Path, extra: &[&str], stages: &[&str]) {
    for stage in stages {
        let mut args = vec!["--config", "clairvoyance.conf"];
        args.extend_from_slice(extra);
        args.push(stage);
        let out = clairvoyance(dir, &args);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
}

const ALL: [&str; 6] = ["generate", "featurize", "label-emission", "train", "predict", "recommend"];

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn end_to_end_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    stages(dir.path(), &[], &ALL);
    let work = dir.path().join("work");
    for f in ["features.csv", "grid_features.csv", "demand.ckpt", "emission.ckpt", "train_trace.csv", "forecast.csv", "recommendation.csv"] {
        assert!(work.join(f).is_file(), "{f} missing");
    }
    assert_eq!(csv_rows(&work.join("recommendation.csv")), 3);
    let header = std::fs::read_to_string(work.join("recommendation.csv")).unwrap();
    assert!(header.starts_with("rank,route_id,mu,theta,mu_norm,theta_norm,score\n"));
    // 4 routes x 8 days x 4 windows
    assert_eq!(csv_rows(&work.join("features.csv")), 128);

    let leftovers: Vec<_> = std::fs::read_dir(&work)
        .unwrap()
        .chain(std::fs::read_dir(dir.path().join("data")).unwrap())
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");

    let out = clairvoyance(dir.path(), &["--config", "clairvoyance.conf", "--k", "2", "recommend"]);
    assert!(out.status.success());
    assert_eq!(csv_rows(&work.join("recommendation.csv")), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" score ")).count(), 2);
}

#[test]
fn reruns_overwrite_in_place_and_seed_flag_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    stages(dir.path(), &[], &["generate", "featurize"]);
    let features = dir.path().join("work/features.csv");
    let first = std::fs::read(&features).unwrap();
    stages(dir.path(), &[], &["featurize"]);
    assert_eq!(std::fs::read(&features).unwrap(), first);

    stages(dir.path(), &["--seed", "12"], &["generate", "featurize"]);
    assert_ne!(std::fs::read(&features).unwrap(), first);
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    for stage in ["featurize", "label-emission", "train", "predict", "recommend"] {
        let out = clairvoyance(dir.path(), &["--config", "clairvoyance.conf", stage]);
        assert_eq!(out.status.code(), Some(2), "{stage}");
        assert!(stderr(&out).starts_with("io.missing: "), "{stage}: {}", stderr(&out));
    }
    let out = clairvoyance(dir.path(), &["--config", "absent.conf", "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_configuration_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    for (body, needle) in [
        ("k = 0\n", "k"),
        ("no_such_key = 1\n", "no_such_key"),
        ("cell_km = -5\n", "cell size"),
        ("split = 0.5, 0.5\n", "split"),
        ("bin_edges = 0, 60, 50\n", "bin_edges"),
    ] {
        write_config(dir.path(), body);
        let out = clairvoyance(dir.path(), &["--config", "clairvoyance.conf", "generate"]);
        assert_eq!(out.status.code(), Some(3), "{body}");
        let err = stderr(&out);
        assert!(err.starts_with("config.invalid: ") && err.contains(needle), "{body}: {err}");
        assert_eq!(err.lines().count(), 1);
    }
    let out = clairvoyance(dir.path(), &["--k", "zero", "generate"]);
    assert_eq!(out.status.code(), Some(3));
    let out = clairvoyance(dir.path(), &["explode"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(clairvoyance(dir.path(), &["--help"]).status.success());
}

#[test]
fn corrupt_input_is_rejected_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    stages(dir.path(), &[], &["generate"]);
    let taxi = dir.path().join("data/taxi.csv");
    let text = std::fs::read_to_string(&taxi).unwrap();
    let mangled: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i > 0 && i % 3 != 0 { "T9,not-a-time,200,1,1,1,1\n".to_string() } else { format!("{l}\n") })
        .collect();
    std::fs::write(&taxi, mangled).unwrap();
    let out = clairvoyance(dir.path(), &["--config", "clairvoyance.conf", "featurize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).lines().last().unwrap().starts_with("input.corrupt: "), "{}", stderr(&out));
}

#[test]
fn diverging_training_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &format!("{SMALL_CONFIG}emission_learning_rate = 1e12\n"));
    stages(dir.path(), &[], &["generate", "featurize", "label-emission"]);
    let out = clairvoyance(dir.path(), &["--config", "clairvoyance.conf", "train"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("train.divergence: "));
    assert!(!dir.path().join("work/emission.ckpt").exists());
}

#[test]
fn horizon_flag_widens_the_windows() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_CONFIG);
    stages(dir.path(), &["--horizon-hours", "3"], &["generate", "featurize"]);
    let text = std::fs::read_to_string(dir.path().join("work/features.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let at = |name: &str| fields[header.iter().position(|h| *h == name).unwrap()];
    let start = chrono::DateTime::parse_from_rfc3339(at("window_start")).unwrap();
    let end = chrono::DateTime::parse_from_rfc3339(at("window_end")).unwrap();
    assert_eq!((end - start).num_hours(), 3);
}

#[test]
fn shipped_config_spells_out_the_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let text = std::fs::read_to_string(root.join("clairvoyance.conf")).unwrap();
    let parsed = clairvoyance::cli::RunConfig::parse(&text, &root).unwrap();
    let mut expect = clairvoyance::cli::RunConfig::default();
    expect.data_dir = root.join("data");
    expect.work_dir = root.join("work");
    assert_eq!(parsed, expect);
}
