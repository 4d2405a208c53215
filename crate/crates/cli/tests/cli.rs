use std::path::Path;
use std::process::{Command, Output};

fn pbac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbac")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_cleanly() {
    let o = pbac(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["train", "eval", "verify", "analyze"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn bad_input_fails_with_one_line() {
    for args in [
        vec!["train", "--kappa", "2"],
        vec!["train", "--env", "atari"],
        vec!["train", "--colour", "blue"],
        vec!["train", "--config", "/nonexistent/run.cfg"],
        vec!["analyze", "/nonexistent/eval.csv"],
        vec!["eval", "--run-dir", "/nonexistent/run"],
    ] {
        let o = pbac(&args);
        assert!(!o.status.success(), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn train_then_eval_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    #[rustfmt::skip]
    let o = pbac(&[
        "train", "--env", "mountaincar-sparse", "--agent", "bootdqnp", "--seed", "2", "--steps", "120",
        "--warmup", "100", "--batch", "8", "--ensemble", "3", "--hidden", "8", "--eval-every", "60",
        "--eval-episodes", "1", "--out-dir", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("mountaincar-sparse/bootdqnp/seed_2");
    for f in ["train.csv", "eval.csv", "visits.csv", "bound.csv", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let config = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("agent=bootdqnp\n") && config.contains("hidden=8\n"));

    let o = pbac(&["eval", "--run-dir", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(run.join("eval_summary.csv")).unwrap();
    assert!(summary.starts_with("final_step,final_return,final_episode_iqm,aulc\n120,"));

    // the same run located through the training flags
    let o = pbac(&["eval", "--env", "mountaincar-sparse", "--agent", "bootdqnp", "--seed", "2", "--out-dir", out]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn verify_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbac(&["verify", "--oracle-cases", "12", "--gradient-cases", "4", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 9, "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("verify_summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn analyze_accepts_single_files() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/analyze/grid");
    let dir = tempfile::tempdir().unwrap();
    let a = fixtures.join("const/seed_4/eval.csv");
    let b = fixtures.join("half/seed_4/eval.csv");
    let o = pbac(&["analyze", a.to_str().unwrap(), b.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("grid/const,1,4,4,4,4\n"), "{summary}");
    assert!(summary.contains("grid/half,1,2,2,2,2\n"), "{summary}");
    let pairwise = std::fs::read_to_string(dir.path().join("pairwise.csv")).unwrap();
    assert!(pairwise.contains("grid/const,grid/half,0,,,\n"), "{pairwise}");
}
