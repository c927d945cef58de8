use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metaradar::harness::{read_rows, read_trial_csv, SummaryRow};
use metaradar::heatmap::{parse_pgm, PlaneRow};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metaradar"))
}

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_on_the_default_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("default.json");
    let o = run(dir.path(), &["--scene", scene.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(!text.contains("FAIL"));
    let grad = text.lines().find(|l| l.contains("gradient")).unwrap();
    let value: f64 = grad.split("max relative error ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(value < 1e-5, "{grad}");
}

#[test]
fn verify_reports_a_corrupted_reflectivity_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(scenes().join("default.json")).unwrap()).unwrap();
    doc["channel"]["reflectivity"] = serde_json::json!([
        {"state": 1, "amplitude": 0.95, "phase_deg": -33.0},
        {"state": 2, "amplitude": 1.30, "phase_deg": 60.0},
        {"state": 3, "amplitude": 0.93, "phase_deg": 134.0},
        {"state": 4, "amplitude": 0.88, "phase_deg": -136.0}
    ]);
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let o = run(dir.path(), &["--scene", path.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL reflectivity"), "{}", stdout(&o));
    assert!(stdout(&o).contains("1.3"));
}

fn heatmap(dir: &Path, config: &str) -> (Vec<u8>, Vec<u8>) {
    let o = run(dir, &["radiomap", "--config", config, "--plane-x", "1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stem = dir.join(format!("out/radiomap_{config}_x1"));
    (
        fs::read(stem.with_extension("csv")).unwrap(),
        fs::read(stem.with_extension("pgm")).unwrap(),
    )
}

#[test]
fn radiomap_is_deterministic_and_depends_on_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let base = "0000000000000000";
    let (csv1, pgm1) = heatmap(dir.path(), base);
    let (csv2, pgm2) = heatmap(dir.path(), base);
    assert_eq!((&csv1, &pgm1), (&csv2, &pgm2));

    let (w, h, px) = parse_pgm(&pgm1).unwrap();
    assert_eq!((w, h), (10, 10));
    let rows: Vec<PlaneRow> = read_rows(csv1.as_slice()).unwrap();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.rss_w > 0.0));
    assert_eq!(String::from_utf8_lossy(&csv1).lines().next(), Some("y,z,rss_w"));

    let (_, other) = heatmap(dir.path(), "3120312031203120");
    let (_, _, px2) = parse_pgm(&other).unwrap();
    let l1: u32 = px.iter().zip(&px2).map(|(a, b)| a.abs_diff(*b) as u32).sum();
    assert!(l1 > 0);
}

#[test]
fn radiomap_planes_of_the_plane_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("planes.json");
    let o = run(
        dir.path(),
        &["--scene", scene.to_str().unwrap(), "radiomap", "--plane-x", "0.5", "--plane-x", "0.7", "--plane-x", "0.9"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for x in ["0.5", "0.7", "0.9"] {
        let pgm = fs::read(dir.path().join(format!("out/radiomap_0000000000000000_x{x}.pgm"))).unwrap();
        assert_eq!(parse_pgm(&pgm).unwrap().0, 10);
    }
}

#[test]
fn radiomap_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["radiomap", "--config", "01230123"][..],
        &["radiomap", "--config", "012301230123012x"],
        &["radiomap", "--plane-x", "3.0"],
        &["--set", "channel.nope=1", "verify"],
        &["--set", "novalue", "verify"],
        &["sweep", "--axis", "distance"],
    ] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn localize_requires_offline_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--seed", "1", "localize"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--build-offline"));
    assert!(stderr(&o).contains("--measurements"));
    let o = run(dir.path(), &["localize", "--build-offline"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn noiseless_localization_ends_at_the_true_block() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--seed", "3", "localize", "--scheme", "optimized", "--sigma", "0", "--build-offline"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_trial_csv(fs::File::open(dir.path().join("out/trial_optimized_seed3.csv")).unwrap()).unwrap();
    assert_eq!(rows.last().unwrap().error_m, 0.0);
}

#[test]
fn localize_is_reproducible_and_loads_saved_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "5", "localize", "--scheme", "random", "--build-offline", "--max-cycles", "15"];
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    let first = fs::read(dir.path().join("out/trial_random_seed5.csv")).unwrap();
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("out/trial_random_seed5.csv")).unwrap(), first);
    let rows = read_trial_csv(first.as_slice()).unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[15].sim_time_ms, 1500);

    // Measurements surveyed with the same seed give the same trial.
    let o = run(dir.path(), &["--seed", "5", "radiomap", "--save", "cm.bin"]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(dir.path(), &["--seed", "5", "localize", "--scheme", "random", "--measurements", "cm.bin", "--max-cycles", "15"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("out/trial_random_seed5.csv")).unwrap(), first);

    // Measurements of another scene are refused.
    let o = run(
        dir.path(),
        &["--seed", "5", "--set", "channel.rho=0.2", "localize", "--measurements", "cm.bin"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different scene"));
}

#[test]
fn two_user_and_obstruction_trials() {
    let dir = tempfile::tempdir().unwrap();
    for (extra, users) in [(&["--users", "3"][..], 3), (&["--obstruction"][..], 2)] {
        let mut args = vec!["--seed", "2", "localize", "--build-offline", "--max-cycles", "3"];
        args.extend_from_slice(extra);
        let o = run(dir.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let rows = read_trial_csv(fs::File::open(dir.path().join("out/trial_optimized_seed2.csv")).unwrap()).unwrap();
        assert_eq!(rows.iter().filter(|r| r.cycle == 0).count(), users);
    }
}

#[test]
fn sweep_writes_one_summary_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["--seed", "1", "sweep", "--axis", "distance", "--values", "1,2", "--reps", "2", "--max-cycles", "5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/sweep_distance.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("scheme,d_m,users,cycles,mean_error_m,median_error_m,p90_error_m")
    );
    let rows: Vec<SummaryRow> = read_rows(text.as_bytes()).unwrap();
    assert_eq!(rows.iter().map(|r| r.d_m).collect::<Vec<_>>(), vec![1.0, 2.0]);
    assert!(rows.iter().all(|r| r.cycles == 5 && r.users == 1));

    let o = run(
        dir.path(),
        &["--seed", "1", "sweep", "--axis", "scheme", "--values", "fixed,bogus", "--reps", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
}
