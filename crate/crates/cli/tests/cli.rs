use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn lorid")
}

fn config(dir: &Path, body: &str) {
    std::fs::write(dir.join("run.cfg"), body).unwrap();
}

fn csv_column(path: &Path, col: usize) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["curves", "--kind", "snr", "--config", "x", "--out", "y", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &[]).status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "gen-data",
        "train-denoiser",
        "train-classifier",
        "fit-basis",
        "purify",
        "curves",
        "verify",
        "attack-eval",
        "calibrate",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn invalid_combinations_fail_before_writing() {
    let d = tempfile::tempdir().unwrap();
    let out = run(
        d.path(),
        &["gen-data", "--kind", "gaussian", "--n", "5", "--seed", "1", "--separation", "2", "--dim", "2", "--out", "g.lten"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("g.lten").exists());

    config(d.path(), "seed = 1\n");
    let out = run(d.path(), &["verify", "--theorem", "3", "--identical", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_reported() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "seed = 1\nwarp = 9\n");
    let out = run(d.path(), &["curves", "--kind", "snr", "--config", "run.cfg", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key 'warp'"));

    config(d.path(), "t = 10\n");
    let out = run(d.path(), &["curves", "--kind", "snr", "--config", "run.cfg", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_outputs() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "seed = 1\n");
    let out = run(d.path(), &["curves", "--kind", "mmse", "--config", "run.cfg", "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let gauss = csv_column(&d.path().join("m.csv"), 1);
    let binary = csv_column(&d.path().join("m.csv"), 2);
    assert_eq!(gauss, vec![1.0, 1.0 / 1.5, 0.5, 1.0 / 3.0]);
    assert_eq!(binary[0], 1.0);

    run(d.path(), &["curves", "--kind", "snr", "--config", "run.cfg", "--out", "s.csv"]);
    let snr = csv_column(&d.path().join("s.csv"), 2);
    assert_eq!(snr.len(), 1000);
    assert!(snr.windows(2).all(|w| w[1] < w[0]));

    run(
        d.path(),
        &["curves", "--kind", "fig2", "--effective-t", "400", "--config", "run.cfg", "--out", "f.csv"],
    );
    let value = csv_column(&d.path().join("f.csv"), 3);
    assert_eq!(value.len(), 10);
    assert!(value.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn verify_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "seed = 4\ntrials = 20000\n");

    let out = run(d.path(), &["verify", "--theorem", "1", "--identical", "--pairs", "5", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(
        d.path(),
        &["verify", "--theorem", "4", "--effective-t", "200,400", "--config", "run.cfg"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    // The loop curve rises between L = 1 and L = 2 at t = 600.
    let out = run(d.path(), &["verify", "--theorem", "4", "--effective-t", "600", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL t=600"));

    let out = run(d.path(), &["verify", "--theorem", "3", "--config", "run.cfg", "--out", "b.csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(csv_column(&d.path().join("b.csv"), 0).len(), 8);
}

#[test]
fn single_cell_calibration() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    config(p, "seed = 2\nt = 20\nL = 2\n");
    for args in [
        &["gen-data", "--kind", "stripes", "--size", "8", "--n", "40", "--seed", "3", "--out", "s.lten", "--labels-out", "y.lten"][..],
        &["train-classifier", "--data", "s.lten", "--labels", "y.lten", "--seed", "1", "--epochs", "3", "--out", "c.lten"],
        &["train-denoiser", "--kind", "gaussian", "--data", "s.lten", "--config", "run.cfg", "--out", "d.lten"],
    ] {
        assert_eq!(run(p, args).status.code(), Some(0), "{args:?}");
    }
    let out = run(
        p,
        &[
            "calibrate", "--data", "s.lten", "--labels", "y.lten", "--classifier", "c.lten", "--denoiser", "d.lten",
            "--config", "run.cfg", "--epsilon", "0.2", "--steps", "3", "--t-grid", "20", "--L-grid", "2", "--out",
            "cal.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_column(&p.join("cal.csv"), 0);
    assert_eq!(rows, vec![20.0]);
    assert_eq!(csv_column(&p.join("cal.csv"), 4), vec![1.0]);

    // use_tucker without a basis is rejected.
    config(p, "seed = 2\nuse_tucker = true\n");
    let out = run(
        p,
        &[
            "attack-eval", "--data", "s.lten", "--labels", "y.lten", "--classifier", "c.lten", "--denoiser", "d.lten",
            "--config", "run.cfg", "--epsilon", "0.2", "--out", "a.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
