//! End-to-end tests of the `pmlhist` binary: output formats, exit codes,
//! seed resolution, and config-file handling.

use std::io::Write;
use std::process::{Command, Output};

fn pmlhist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmlhist"))
        .args(args)
        .env_remove("PMLHIST_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

#[test]
fn bound_prints_all_five_rows_at_twelve_digits() {
    let out = pmlhist(&["bound", "--b", "2", "--alpha", "0.05", "--k", "10"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("eps_dp              1.00000000000e0"), "{text}");
    assert!(text.contains("eps_pml_tight       9.17577887121e-1"), "{text}");
    assert!(text.contains("eps_pml_simplified  9.51250000000e-1"), "{text}");
    assert!(text.contains("eps_pml_composition 4.27781250000e0"), "{text}");
    assert!(text.contains("pml_cap             2.99573227355e0"), "{text}");
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn bound_rejects_bad_parameters_with_exit_2() {
    let out = pmlhist(&["bound", "--b", "2", "--alpha", "0.2", "--k", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"));

    let out = pmlhist(&["bound", "--b", "-1", "--alpha", "0.05", "--k", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("scale"));

    // clap's own usage errors also signal exit code 2.
    let out = pmlhist(&["bound", "--b", "2", "--alpha", "0.05"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_solves_both_mechanisms() {
    let out = pmlhist(&["calibrate", "--epsilon", "0.5", "--mechanism", "dp"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "4.00000000000e0");

    let out = pmlhist(&["calibrate", "--epsilon", "0.5", "--alpha", "0.05", "--mechanism", "pml"]);
    assert!(out.status.success());
    let b: f64 = stdout(&out).trim().parse().expect("numeric scale");
    assert!((b - 3.7401).abs() <= 1e-3, "b = {b}");

    let out = pmlhist(&["calibrate", "--epsilon", "0.5", "--mechanism", "pml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--alpha"));
}

#[test]
fn calibrate_reports_when_no_noise_is_needed() {
    let out = pmlhist(&["calibrate", "--epsilon", "3.0", "--alpha", "0.05", "--mechanism", "pml"]);
    assert!(out.status.success(), "a cap-dominated target is not an error");
    assert_eq!(stdout(&out).trim(), "none");
    assert!(stderr(&out).contains("cap"));
}

#[test]
fn privatize_is_deterministic_given_a_seed() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "1\n2\n2\n3\n3\n3\n").unwrap();
    let path = file.path().to_str().unwrap();

    let args = [
        "privatize",
        "--input",
        path,
        "--epsilon",
        "0.5",
        "--alpha",
        "0.3",
        "--mechanism",
        "pml",
        "--seed",
        "11",
    ];
    let first = pmlhist(&args);
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let text = stdout(&first);
    assert!(text.starts_with("bin,count\n"), "{text}");
    assert_eq!(text.lines().count(), 4, "header plus one row per bin");
    assert_eq!(stdout(&pmlhist(&args)), text, "same seed, same release");

    let other = pmlhist(&[
        "privatize",
        "--input",
        path,
        "--epsilon",
        "0.5",
        "--alpha",
        "0.3",
        "--mechanism",
        "pml",
        "--seed",
        "12",
    ]);
    assert_ne!(stdout(&other), text, "a fresh seed draws fresh noise");
}

#[test]
fn privatize_validates_alpha_against_the_inferred_bin_count() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "1\n2\n2\n3\n3\n3\n").unwrap();
    let path = file.path().to_str().unwrap();

    // k = 3 is inferred from the labels, so the floor must be at most 1/3.
    let out = pmlhist(&[
        "privatize",
        "--input",
        path,
        "--epsilon",
        "0.5",
        "--alpha",
        "0.4",
        "--mechanism",
        "pml",
        "--seed",
        "11",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"));
}

#[test]
fn privatize_maps_input_problems_to_exit_codes() {
    let empty = tempfile::NamedTempFile::new().unwrap();
    let out = pmlhist(&[
        "privatize",
        "--input",
        empty.path().to_str().unwrap(),
        "--epsilon",
        "0.5",
        "--mechanism",
        "dp",
    ]);
    assert_eq!(out.status.code(), Some(2), "empty dataset is a validation error");

    let out = pmlhist(&[
        "privatize",
        "--input",
        "/nonexistent/labels.txt",
        "--epsilon",
        "0.5",
        "--mechanism",
        "dp",
    ]);
    assert_eq!(out.status.code(), Some(4), "unreadable input is an I/O error");
}

#[test]
fn privatize_reads_the_seed_from_the_environment() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "1\n2\n2\n3\n3\n3\n").unwrap();
    let path = file.path().to_str().unwrap();

    let flagged = pmlhist(&[
        "privatize",
        "--input",
        path,
        "--epsilon",
        "0.5",
        "--mechanism",
        "dp",
        "--seed",
        "99",
    ]);
    let from_env = Command::new(env!("CARGO_BIN_EXE_pmlhist"))
        .args(["privatize", "--input", path, "--epsilon", "0.5", "--mechanism", "dp"])
        .env("PMLHIST_SEED", "99")
        .output()
        .expect("binary runs");
    assert!(from_env.status.success());
    assert_eq!(stdout(&from_env), stdout(&flagged), "--seed and PMLHIST_SEED agree");

    let bad_env = Command::new(env!("CARGO_BIN_EXE_pmlhist"))
        .args(["privatize", "--input", path, "--epsilon", "0.5", "--mechanism", "dp"])
        .env("PMLHIST_SEED", "not-a-number")
        .output()
        .expect("binary runs");
    assert_eq!(bad_env.status.code(), Some(2));
}

#[test]
fn simulate_writes_the_csv_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = pmlhist(&[
        "simulate",
        "--n",
        "50",
        "--reps",
        "20",
        "--seed",
        "5",
        "--epsilon-grid",
        "0.5",
        "--k-grid",
        "5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty(), "data goes to the file, not stdout");
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with(
        "epsilon,k,alpha,mechanism,noise_scale,mean_tvd,stderr_tvd,degenerate_count,reps,seed\n"
    ));
    assert_eq!(csv.lines().count(), 3, "header plus dp and pml rows");
}

#[test]
fn simulate_reads_config_files_and_lets_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("sweep.conf");
    std::fs::write(
        &conf,
        "# small smoke sweep\nn = 50\nreps = 20\nseed = 5\nepsilon_grid = 0.5\nk_grid = 5\nmechanisms = dp,pml\n",
    )
    .unwrap();

    let from_config = pmlhist(&["simulate", "--config", conf.to_str().unwrap()]);
    assert!(from_config.status.success(), "stderr: {}", stderr(&from_config));
    let from_flags = pmlhist(&[
        "simulate",
        "--n",
        "50",
        "--reps",
        "20",
        "--seed",
        "5",
        "--epsilon-grid",
        "0.5",
        "--k-grid",
        "5",
    ]);
    assert_eq!(stdout(&from_config), stdout(&from_flags));

    // A flag takes precedence over the same key in the file.
    let overridden = pmlhist(&["simulate", "--config", conf.to_str().unwrap(), "--seed", "6"]);
    let reseeded = pmlhist(&[
        "simulate",
        "--n",
        "50",
        "--reps",
        "20",
        "--seed",
        "6",
        "--epsilon-grid",
        "0.5",
        "--k-grid",
        "5",
    ]);
    assert_eq!(stdout(&overridden), stdout(&reseeded));
    assert_ne!(stdout(&overridden), stdout(&from_config));
}

#[test]
fn simulate_rejects_malformed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");

    std::fs::write(&conf, "bogus_key = 1\n").unwrap();
    let out = pmlhist(&["simulate", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));

    std::fs::write(&conf, "reps\n").unwrap();
    let out = pmlhist(&["simulate", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("key=value"));

    let out = pmlhist(&["simulate", "--config", "/nonexistent/sweep.conf"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_rejects_invalid_grids() {
    let out = pmlhist(&["simulate", "--reps", "0"]);
    assert_eq!(out.status.code(), Some(2));

    // alpha above 1/k for some requested k.
    let out = pmlhist(&[
        "simulate",
        "--k-grid",
        "5,21",
        "--alpha-grid",
        "0.05",
        "--reps",
        "5",
        "--n",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"));

    let out = pmlhist(&["simulate", "--mechanisms", "dp,laplace"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("laplace"));
}

#[test]
fn privatize_with_tiny_noise_recovers_the_counts() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "1\n2\n1\n3\n").unwrap();
    // At epsilon = 1000 the DP scale is 0.002, so every bin rounds back to
    // its true count.
    let out = pmlhist(&[
        "privatize",
        "--input",
        file.path().to_str().unwrap(),
        "--epsilon",
        "1000",
        "--mechanism",
        "dp",
        "--seed",
        "4",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "bin,count\n1,2\n2,1\n3,1\n");
}

#[test]
fn verify_passes_a_small_instance() {
    let out = pmlhist(&[
        "verify", "--n", "3", "--b", "1.0", "--probs", "0.3,0.7", "--trials", "200", "--seed", "1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("violations   0"), "{text}");
    assert!(text.trim_end().ends_with("PASS"), "{text}");

    // The witness-tightness clause also applies when the minimum-probability
    // class is class 1 of a skewed distribution.
    let out = pmlhist(&[
        "verify", "--n", "2", "--k", "2", "--b", "1", "--probs", "0.5,0.5", "--seed", "1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let out = pmlhist(&[
        "verify",
        "--n",
        "3",
        "--k",
        "3",
        "--b",
        "2",
        "--probs",
        "0.2,0.3,0.5",
        "--seed",
        "1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
}

#[test]
fn verify_signals_budget_exhaustion_with_exit_3() {
    let out = pmlhist(&[
        "verify",
        "--n",
        "50",
        "--k",
        "10",
        "--b",
        "1.0",
        "--probs",
        "0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1",
        "--trials",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

#[test]
fn verify_rejects_inconsistent_arguments() {
    let out = pmlhist(&["verify", "--n", "3", "--k", "3", "--b", "1.0", "--probs", "0.3,0.7"]);
    assert_eq!(out.status.code(), Some(2));

    let out = pmlhist(&["verify", "--n", "3", "--b", "1.0", "--probs", "0.3,0.6"]);
    assert_eq!(out.status.code(), Some(2), "probabilities must sum to one");
}
