//! End-to-end checks of the `lncouple` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lncouple")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn kernel_info_prints_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel-info", "--profile", "quadratic", "--dim", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1.640625"), "{}", stdout(&o));
    let o = run(&["kernel-info", "--profile", "quadratic", "--dim", "2"], dir.path());
    assert!(stdout(&o).contains("0.954930"), "{}", stdout(&o));
}

#[test]
fn kernel_info_rejects_unknown_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel-info", "--profile", "nosuch", "--dim", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_writes_solution_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--out", "res"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol = std::fs::read_to_string(dir.path().join("res/solution.csv")).unwrap();
    assert!(sol.starts_with("point,value,exact,region\n"));
    for tag in ["local", "nonlocal", "interface_flux"] {
        assert!(sol.lines().any(|l| l.ends_with(&format!(",{tag}"))), "missing {tag}");
    }
    let errs = std::fs::read_to_string(dir.path().join("res/errors.csv")).unwrap();
    assert!(errs.contains("combined,"));
}

#[test]
fn solve_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["solve", "--out", "a", "--threads", "1"], dir.path()).status.success());
    assert!(run(&["solve", "--out", "b", "--threads", "4"], dir.path()).status.success());
    for f in ["solution.csv", "errors.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn oversized_horizon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[kernel]\nprofile = \"quadratic\"\ndelta = 0.3\n");
    let o = run(&["solve", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2*delta"), "{}", stderr(&o));
}

#[test]
fn missing_or_malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["solve", "--config", "absent.toml"], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), "[mesh]\nlocal_ratio = 8.0\nnonlocal_ratio = 8.0\nextra = 1\n");
    assert_eq!(run(&["solve", "--config", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn stalled_iterative_solve_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[solver]\nmethod = \"iterative\"\ntol = 1e-14\nrestart = 2\nmax_iter = 2\n");
    let o = run(&["solve", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn convergence_writes_table_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["convergence", "--out", "study"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("study/convergence.csv")).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "delta,h_local,h_nl,h1_L,h1_NL,l2_gamma,combined,r_gamma,r_nl2,half_integral");
    assert_eq!(data.len(), 5);
    let combined = text.lines().find(|l| l.starts_with("# combined,")).unwrap();
    let slope: f64 = combined.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.8..2.2).contains(&slope), "{combined}");
    let dat = std::fs::read_to_string(dir.path().join("study/combined.dat")).unwrap();
    assert_eq!(dat.lines().count(), 4);
}

#[test]
fn single_horizon_sweep_warns_without_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[study]\ndeltas = [0.1]\n");
    let o = run(&["convergence", "--config", &cfg, "--out", "one"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("one/convergence.csv")).unwrap();
    assert!(text.contains("# combined,none"));
}

#[test]
fn radial_sweep_reports_decaying_half_integral() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\ncase = \"mcR1\"\ncoeff_local = 1.0\ncoeff_nonlocal = 2.0\n[study]\ndeltas = [0.1, 0.05, 0.025]\n",
    );
    let o = run(&["convergence", "--config", &cfg, "--out", "radial"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("radial/half_integral.dat")).unwrap();
    let values: Vec<f64> = text.lines().map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn verify_fails_resolution_guard_on_coarse_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nlocal_ratio = 8.0\nnonlocal_ratio = 1.0\n");
    let o = run(&["verify", "--config", &cfg], dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("FAIL [ 0] resolution guard"), "{}", stdout(&o));
}

fn statuses(text: &str) -> Vec<String> {
    text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).map(|l| l[..9].to_string()).collect()
}

#[test]
fn verify_exit_code_tracks_failures_and_seed_only_moves_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&["verify", "--seed", "7"], dir.path());
    let b = run(&["verify", "--seed", "11"], dir.path());
    for o in [&a, &b] {
        let out = stdout(o);
        assert_eq!(statuses(&out).len(), 11, "{out}");
        assert_eq!(o.status.success(), !out.lines().any(|l| l.starts_with("FAIL")), "{out}");
    }
    let (sa, sb) = (stdout(&a), stdout(&b));
    assert_eq!(statuses(&sa), statuses(&sb));
    let sampled = |s: &str| s.lines().find(|l| l.contains("[ 6]")).unwrap().split(": ").nth(1).unwrap().to_string();
    assert_ne!(sampled(&sa), sampled(&sb));
}
