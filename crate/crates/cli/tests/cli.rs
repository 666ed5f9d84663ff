use std::fs;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree-dab")).args(args).env("CELLFREE_DAB_THREADS", "2").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn overhead_prints_formula_values() {
    let o = cli(&["overhead", "--K", "6", "--B", "4", "--iters", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "ring 420"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("star 6480")), "{text}");
}

#[test]
fn validate_exits_zero() {
    let o = cli(&["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("[FAIL]"));
}

#[test]
fn invalid_arguments_exit_one() {
    assert_eq!(cli(&["bogus"]).status.code(), Some(1));
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "--var", "pt", "--values", "30:2:20"]).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "--var", "x", "--values", "20"]).status.code(), Some(1));
    assert_eq!(cli(&["convergence", "--solver", "mesh"]).status.code(), Some(1));
    assert_eq!(cli(&["convergence", "--config", "/nonexistent/cfg.json"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["sweep", "--var", "pt", "--values", "20:2:24", "--trials", "2", "--out", out];
    let o = cli(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("sweep_pt_dbm").join("results.csv");
    let first = fs::read_to_string(&csv).unwrap();
    assert_eq!(first.lines().count(), 1 + 3 * 3 * 3 * 2);
    assert_eq!(cli(&args).status.code(), Some(0));
    assert_eq!(fs::read_to_string(&csv).unwrap(), first);
}

#[test]
fn convergence_and_beampattern_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"solver": {"max_outer": 5}}"#).unwrap();
    let o = cli(&["convergence", "--trials", "2", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("convergence/traces.csv").exists());
    let o = cli(&["beampattern", "--mode", "dab,dub", "--angles", "91", "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let pattern = fs::read_to_string(dir.path().join("beampattern/pattern_dab.csv")).unwrap();
    assert_eq!(pattern.lines().count(), 92);
    assert!(pattern.starts_with("angle_deg,bs0_db,bs0_norm_db,bs1_db,bs1_norm_db"));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("taken");
    fs::write(&file, "x").unwrap();
    let o = cli(&["convergence", "--trials", "1", "--out", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
