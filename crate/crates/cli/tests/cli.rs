use std::fs;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upb-locc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn build_writes_state_file() {
    let o = cli(&["build", "--d", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("schema 1\nd 3\nstates 19\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("state ")).count(), 19);
}

#[test]
fn small_d_is_a_usage_error() {
    let o = cli(&["build", "--d", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d must be ≥ 3"));
    assert_eq!(cli(&["run", "--theorem", "T4", "--d", "2"]).status.code(), Some(2));
}

#[test]
fn fixed_dimension_theorem_rejects_other_d() {
    let o = cli(&["run", "--theorem", "T2", "--d", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("T2 requires d = 3"));
    assert_eq!(cli(&["run", "--theorem", "T9", "--d", "3"]).status.code(), Some(2));
}

#[test]
fn missing_arguments_are_usage_errors() {
    assert_eq!(cli(&["run", "--d", "3"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn t1_run_passes_with_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.json");
    let o = cli(&["run", "--theorem", "T1", "--d", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("T1 d=3: pass ledger "), "{line}");
    assert!(line.trim_end().ends_with("= 2.584963 ebits"), "{line}");
    let json = fs::read_to_string(out).unwrap();
    assert!(json.contains("\"passed\": true"));
    assert!(json.contains("\"command\": \"run\""));
}

#[test]
fn t3_run_reports_check_failure() {
    let o = cli(&["run", "--theorem", "T3", "--d", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("\"passed\": false"));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn general_d_runs_pass() {
    for t in ["T4", "T5", "T6"] {
        let o = cli(&["run", "--theorem", t, "--d", "5"]);
        assert_eq!(o.status.code(), Some(0), "{t}: {}", stderr(&o));
    }
}

#[test]
fn verify_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u3.txt");
    assert_eq!(cli(&["build", "--d", "3", "--out", file.to_str().unwrap()]).status.code(), Some(0));
    let ok = cli(&["verify", "--d", "3", "--input", file.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("\"construction\""));

    let text = fs::read_to_string(&file).unwrap();
    let tampered = text.replacen("amp 0,0,0 1.0000000000000000e0", "amp 0,0,0 2.0000000000000000e0", 1);
    assert_ne!(tampered, text);
    fs::write(&file, tampered).unwrap();
    let bad = cli(&["verify", "--d", "3", "--input", file.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));

    fs::write(&file, "not a state file\n").unwrap();
    assert_eq!(cli(&["verify", "--d", "3", "--input", file.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn verify_with_seed_runs_probe() {
    let o = cli(&["verify", "--d", "3", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("seesaw (diagnostic)"));
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let o = cli(&["build", "--d", "3", "--out", "/nonexistent-dir/x/u.txt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = cli(&["run", "--theorem", "T6", "--d", "6"]);
    let b = cli(&["run", "--theorem", "T6", "--d", "6"]);
    assert_eq!(a.stdout, b.stdout);
    let t1 = cli(&["trace", "--theorem", "T1", "--d", "3"]);
    let t2 = cli(&["trace", "--theorem", "T1", "--d", "3"]);
    assert_eq!(t1.stdout, t2.stdout);
    assert!(stdout(&t1).contains("Step 1 (Alice)"));
}

#[test]
fn sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig5.csv");
    let plot = dir.path().join("fig5.gp");
    let args = [
        "sweep", "--d-min", "4", "--d-max", "40", "--parity", "even",
        "--theorem", "T4", "--theorem", "T5", "--theorem", "T6",
        "--csv", csv.to_str().unwrap(), "--plot", plot.to_str().unwrap(),
    ];
    assert_eq!(cli(&args).status.code(), Some(0));
    let first = fs::read(&csv).unwrap();
    assert_eq!(cli(&args).status.code(), Some(0));
    assert_eq!(fs::read(&csv).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 58);
    assert!(text.contains("# T4=T5 at d=4"));
    assert!(fs::read_to_string(&plot).unwrap().contains("'fig5.csv'"));
}

#[test]
fn sweep_defaults_to_all_theorems() {
    let o = cli(&["sweep", "--d-min", "3", "--d-max", "3", "--cutoff", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("3,")).count(), 6);
    assert_eq!(cli(&["sweep", "--d-min", "6", "--d-max", "4"]).status.code(), Some(2));
}
