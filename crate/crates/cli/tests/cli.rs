//! Drives the installed binary end to end: exit codes, report lines,
//! diagnostics, and artifact determinism.

use std::fs;
use std::process::{Command, Output};

use markov_mimic::textio::strip_timestamp;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_markov-mimic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn builtin_fixtures_pass_their_own_checks() {
    for args in [
        &["mimic", "memory-chain"][..],
        &["mimic", "already-markov"],
        &["markovianize", "memory-chain", "--s", "1"],
        &["entropy-min", "memory-chain"],
        &["occupation", "fixture-hd", "--beta", "0.5"],
    ] {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?} failed: {}", stderr(&out));
        assert!(stdout(&out).contains("verdict = pass"), "{args:?}");
    }
}

#[test]
fn reports_carry_the_headline_numbers() {
    let out = run(&["mimic", "already-markov"]);
    assert!(stdout(&out).contains("note = input is Markov"));

    let out = run(&["markovianize", "memory-chain", "--s", "1"]);
    let text = stdout(&out);
    assert!(text.contains("entropy before = 6.931471805599453e-1"));
    assert!(text.contains("entropy after = 0e0"));
    assert!(text.contains("markov at s = true"));

    let out = run(&["entropy-min", "memory-chain"]);
    let text = stdout(&out);
    assert!(text.contains("entropy of memory chain = 6.931471805599453e-1"));
    assert!(text.contains("entropy = 0e0"));
}

#[test]
fn labeled_alphabets_work_through_the_file_route() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.law");
    fs::write(
        &path,
        "# pathlaw v1\nstates = a b\nhorizon = 2\n\
         a a a 2.5e-1\na b a 2.5e-1\nb a b 2.5e-1\nb b b 2.5e-1\n",
    )
    .unwrap();
    let out = run(&["mimic", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // same memory structure as the built-in chain, so the same entropy drop
    let out = run(&["markovianize", "--input", path.to_str().unwrap(), "--s", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("entropy before = 6.931471805599453e-1"));
    assert!(text.contains("entropy after = 0e0"));
}

#[test]
fn bad_inputs_exit_2_with_line_numbered_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.law");
    fs::write(
        &path,
        "# pathlaw v1\nstates = a b\nhorizon = 1\na a 4.5e-1\na b 4.5e-1\n",
    )
    .unwrap();
    let out = run(&["mimic", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("line 5"), "got: {err}");
    assert!(err.contains("sum"), "got: {err}");

    let out = run(&["mimic", "no-such-fixture"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown fixture"));

    // a fixture of the wrong kind for the subcommand
    let out = run(&["mimic", "fixture-hd"]);
    assert_eq!(code(&out), 2);

    let out = run(&["mimic", "--input", dir.path().join("absent.law").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cannot read"));

    let out = run(&["sde-mimic", "running-max", "--n", "500"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn sde_mimic_passes_and_the_uniform_control_fails() {
    let out = run(&["sde-mimic", "running-max", "--n", "4000", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("verdict = pass"));

    // config file that swaps the fitted control for a uniform one: the run
    // completes but its own comparison must reject, so the exit code is 1
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("uniform.sde");
    fs::write(
        &path,
        "# sdeconfig v1\nmodel = running-max\ncontrol = uniform\nn = 20000\nseed = 5\n",
    )
    .unwrap();
    let out = run(&["sde-mimic", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("uniform (deliberate mismatch)"));
    assert!(text.contains("verdict = FAIL"));
    assert!(text.contains("REJECT"));
}

#[test]
fn same_seed_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (threads, out_dir) in [("1", &a), ("4", &b)] {
        let out = run(&[
            "sde-mimic",
            "running-max",
            "--n",
            "4000",
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in ["original-marginals.csv", "mimic-marginals.csv"] {
        let left = fs::read(a.join(name)).unwrap();
        let right = fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs across thread counts");
    }
    let left = fs::read_to_string(a.join("report.txt")).unwrap();
    let right = fs::read_to_string(b.join("report.txt")).unwrap();
    assert_eq!(strip_timestamp(&left), strip_timestamp(&right));
}

#[test]
fn repeat_runs_differ_only_in_the_timestamp() {
    let first = run(&["occupation", "fixture-hd", "--beta", "0.5"]);
    let second = run(&["occupation", "fixture-hd", "--beta", "0.5"]);
    assert_eq!(code(&first), 0);
    assert_eq!(
        strip_timestamp(&stdout(&first)),
        strip_timestamp(&stdout(&second))
    );
}
