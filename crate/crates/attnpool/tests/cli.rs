use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn attnpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnpool"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn run_ok(args: &[&str]) {
    let out = attnpool(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_LORENZ: &str = r#"
experiment = "lorenz"
seed = 4
output = "out"

[model]
methods = ["linear", "additive", "fixed"]
delays = [2]
epochs = 3

[lorenz]
t_transient = 10.0
t_train = 40.0
t_val = 256.0
segments = 8
segment_len = 32
"#;

const SMALL_COVID: &str = r#"
experiment = "covid"
seed = 2
output = "out"

[model]
methods = ["linear", "additive"]
delay = 2
epochs = 2

[model.additive]
hidden = 8

[covid]
locations = 3
weeks = 100

[[covid.periods]]
start = "2021-06-05"
end = "2021-10-30"
"#;

#[test]
fn version_and_help_exit_zero() {
    let out = attnpool(&["version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("attnpool "));
    assert_eq!(attnpool(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(attnpool(&[]).status.code(), Some(1));
    assert_eq!(attnpool(&["lorenz-run"]).status.code(), Some(1));
    assert_eq!(attnpool(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn validate_prints_the_resolved_plan() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "l.toml", SMALL_LORENZ);
    let out = attnpool(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"ffnn_hidden\""), "{text}");
    let hash = text
        .lines()
        .last()
        .unwrap()
        .strip_prefix("config hash ")
        .unwrap();
    assert_eq!(hash.len(), 64);

    // Output location does not enter the hash.
    let moved = write_config(
        dir.path(),
        "m.toml",
        &SMALL_LORENZ.replace("output = \"out\"", "output = \"elsewhere\""),
    );
    let other = attnpool(&["validate", "--config", moved.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&other.stdout).ends_with(&format!("config hash {hash}\n")));
}

#[test]
fn config_errors_exit_one_with_suggestions() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &SMALL_LORENZ.replace("epochs = 3", "epohcs = 3"),
    );
    let out = attnpool(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.epohcs"), "{err}");
    assert!(err.contains("`model.epochs`"), "{err}");

    let cfg = write_config(
        dir.path(),
        "neg.toml",
        &SMALL_LORENZ.replace("epochs = 3", "epochs = 0"),
    );
    let out = attnpool(&["lorenz-run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.epochs"));
    assert!(!dir.path().join("out").exists());

    let missing = dir.path().join("absent.toml");
    assert_eq!(
        attnpool(&["validate", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    let cfg = write_config(dir.path(), "l.toml", SMALL_LORENZ);
    let out = attnpool(&["covid-run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment"));
}

#[test]
fn malformed_input_files_exit_two_without_partial_output() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("f.csv"), "not,a,hub,file\n1,2,3,4\n").unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "location,date,value\nUS,2021-01-02,3\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "experiment = \"covid\"\nseed = 0\noutput = \"out\"\n[covid]\nforecasts = \"f.csv\"\ntruth = \"t.csv\"\n",
    );
    let out = attnpool(&["covid-run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("f.csv"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn lorenz_data_has_the_configured_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "l.toml", SMALL_LORENZ);
    run_ok(&["lorenz-data", "--config", cfg.to_str().unwrap()]);
    let out = dir.path().join("out");
    assert_eq!(csv_rows(&out.join("train.csv")), 400);
    assert_eq!(csv_rows(&out.join("validation.csv")), 2568);
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(info["segment_starts"].as_array().unwrap().len(), 8);
    assert_eq!(info["rho_sampling"], "held_per_sample");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counters"]["train_samples"], 400);
}

fn lorenz_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    [
        "valid_times.csv",
        "loss_curve.csv",
        "valid_time_summary.csv",
        "tracking.csv",
        "forecasts.csv",
        "attention_weights.csv",
    ]
    .iter()
    .map(|f| {
        (
            f.to_string(),
            fs::read(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}")),
        )
    })
    .collect()
}

#[test]
fn lorenz_run_is_deterministic_across_reruns_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "l.toml", SMALL_LORENZ);
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["lorenz-run", "--config", c, "--output", a.to_str().unwrap()]);
    run_ok(&[
        "lorenz-run",
        "--config",
        c,
        "--output",
        b.to_str().unwrap(),
        "--threads",
        "3",
    ]);
    assert_eq!(lorenz_csvs(&a), lorenz_csvs(&b));
    // linear at l = 1 plus additive and fixed at l = 2, eight segments each.
    assert_eq!(csv_rows(&a.join("valid_times.csv")), 24);
    assert_eq!(csv_rows(&a.join("valid_time_summary.csv")), 3);

    let c2 = dir.path().join("s.toml");
    fs::write(&c2, SMALL_LORENZ.replace("seed = 4", "seed = 5")).unwrap();
    let d = dir.path().join("d");
    run_ok(&[
        "lorenz-run",
        "--config",
        c2.to_str().unwrap(),
        "--output",
        d.to_str().unwrap(),
    ]);
    assert_ne!(
        fs::read(a.join("loss_curve.csv")).unwrap(),
        fs::read(d.join("loss_curve.csv")).unwrap()
    );
}

#[test]
fn lorenz_run_reuses_saved_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "l.toml", SMALL_LORENZ);
    let c = cfg.to_str().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "lorenz-data",
        "--config",
        c,
        "--output",
        data.to_str().unwrap(),
    ]);
    let fresh = dir.path().join("fresh");
    run_ok(&[
        "lorenz-run",
        "--config",
        c,
        "--output",
        fresh.to_str().unwrap(),
    ]);
    let reuse = write_config(
        dir.path(),
        "r.toml",
        &format!("{SMALL_LORENZ}data_dir = \"data\"\n"),
    );
    let saved = dir.path().join("saved");
    run_ok(&[
        "lorenz-run",
        "--config",
        reuse.to_str().unwrap(),
        "--output",
        saved.to_str().unwrap(),
    ]);
    assert_eq!(lorenz_csvs(&fresh), lorenz_csvs(&saved));

    // Data made with other settings is refused.
    let other = write_config(
        dir.path(),
        "o.toml",
        &format!(
            "{}data_dir = \"data\"\n",
            SMALL_LORENZ.replace("seed = 4", "seed = 9")
        ),
    );
    let out = attnpool(&[
        "lorenz-run",
        "--config",
        other.to_str().unwrap(),
        "--output",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn covid_synth_then_run_from_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL_COVID);
    let c = cfg.to_str().unwrap();
    let hub = dir.path().join("hub");
    run_ok(&[
        "covid-synth",
        "--config",
        c,
        "--output",
        hub.to_str().unwrap(),
    ]);
    let gaps = csv_rows(&hub.join("injected_gaps.csv"));
    assert!(gaps > 0);

    let synth = dir.path().join("synth");
    run_ok(&[
        "covid-run",
        "--config",
        c,
        "--output",
        synth.to_str().unwrap(),
    ]);
    assert_eq!(csv_rows(&synth.join("imputation_log.csv")), gaps);
    let mut logged: Vec<String> = fs::read_to_string(synth.join("imputation_log.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    let mut injected: Vec<String> = fs::read_to_string(hub.join("injected_gaps.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    logged.sort();
    injected.sort();
    assert_eq!(logged, injected);
    // Two trained methods, uniform mean and best single for one period.
    assert_eq!(csv_rows(&synth.join("period_summary.csv")), 4);
    assert_eq!(csv_rows(&synth.join("candidate_summary.csv")), 9);

    let files_cfg = SMALL_COVID.replace(
        "locations = 3\nweeks = 100\n",
        "forecasts = \"hub/forecasts.csv\"\ntruth = \"hub/truth.csv\"\n",
    );
    let fcfg = write_config(dir.path(), "f.toml", &files_cfg);
    let files = dir.path().join("files");
    run_ok(&[
        "covid-run",
        "--config",
        fcfg.to_str().unwrap(),
        "--output",
        files.to_str().unwrap(),
    ]);
    for f in [
        "imputation_log.csv",
        "wis_by_week.csv",
        "period_summary.csv",
        "loss_curve.csv",
    ] {
        assert_eq!(
            fs::read(synth.join(f)).unwrap(),
            fs::read(files.join(f)).unwrap(),
            "{f}"
        );
    }

    let again = dir.path().join("again");
    run_ok(&[
        "covid-run",
        "--config",
        c,
        "--output",
        again.to_str().unwrap(),
    ]);
    for f in [
        "imputation_log.csv",
        "wis_by_week.csv",
        "period_summary.csv",
        "candidate_summary.csv",
        "loss_curve.csv",
    ] {
        assert_eq!(
            fs::read(synth.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}
