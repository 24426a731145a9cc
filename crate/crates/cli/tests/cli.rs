use std::fs;
use std::process::{Command, Output};

fn condwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condwalk")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn kernel_table_header_and_origin() {
    let o = condwalk(&["kernel-table", "--x-max", "1", "--y-max", "1", "--step", "0.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,p,ell,psi"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|t| t.parse().unwrap()).collect();
    assert!((first[2] - (2.0 * std::f64::consts::PI).sqrt() / 2.0).abs() < 1e-12);
    assert_eq!(text.lines().count(), 1 + 9);
}

#[test]
fn oracle_rows_sum_to_persistence() {
    let o = condwalk(&["oracle", "--law", "ssrw", "--x", "0", "--n", "6", "--constraint", "n"]);
    assert!(o.status.success());
    let total: f64 = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    // P(tau_0 > 6) for the simple walk is C(6,3)/2^6.
    assert!((total - 20.0 / 64.0).abs() < 1e-15);
}

#[test]
fn persistence_and_exit_pmf_agree() {
    let p = stdout(&condwalk(&["persistence", "--law", "trinomial", "--x", "1", "--n", "20"]));
    let e = stdout(&condwalk(&["exit-pmf", "--law", "trinomial", "--x", "1", "--n", "20"]));
    let last: f64 = p.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let exits: f64 = e.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((last + exits - 1.0).abs() < 1e-14);
}

#[test]
fn harmonic_skipfree_is_linear() {
    let o = condwalk(&["harmonic", "--law", "skipfree", "--method", "skipfree_exact", "--xmax", "4"]);
    assert!(o.status.success());
    for line in stdout(&o).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (x, v): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        assert_eq!(v, x + 1.0);
    }
}

#[test]
fn predict_reports_parity_zero() {
    let o = condwalk(&["predict", "--law", "ssrw", "--predictor", "local", "--n", "64", "--x", "0", "--y", "0,1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,x,y,predictor,value");
    assert!(lines[2].ends_with(",local,0.0000000000000000e0"));
}

#[test]
fn mc_is_seeded() {
    let args = ["mc", "--law", "uniform", "--n", "32", "--paths", "20000", "--seed", "4"];
    assert_eq!(stdout(&condwalk(&args)), stdout(&condwalk(&args)));
}

#[test]
fn config_flags_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("o.cfg");
    fs::write(&cfg, "law = ssrw\nn = 4\nx = 0\n").unwrap();
    let a = stdout(&condwalk(&["oracle", "--config", cfg.to_str().unwrap()]));
    let b = stdout(&condwalk(&["oracle", "--config", cfg.to_str().unwrap(), "--n", "2"]));
    assert_eq!(a.lines().count(), 4);
    assert_eq!(b.lines().count(), 3);
}

#[test]
fn run_writes_report_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "law = uniform\nexperiment = persistence, exit\npaths = 10000\n[grid]\nn = 16, 32\nx = 0, 0.5\n[tables]\npaths = 10000\nn_cap = 256\n",
    )
    .unwrap();
    let one = dir.path().join("one.csv");
    let four = dir.path().join("four.csv");
    for (path, threads) in [(&one, "1"), (&four, "4")] {
        let o = condwalk(&["run", "--config", cfg.to_str().unwrap(), "--out", path.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(&one).unwrap();
    assert_eq!(a, fs::read(&four).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("experiment,n,x,y,v,oracle,predictor,ratio,envelope,envelope_ratio,regimes\n"));
}

#[test]
fn run_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.cfg");
    fs::write(&cfg, "law = ssrw\nexperiment = level-sets\n[grid]\nx = 0, 1\ny = 0\nv = 0.5\n").unwrap();
    let o = condwalk(&["run", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    assert!(stdout(&o).trim_start().starts_with('['));
}

#[test]
fn errors_exit_with_one() {
    assert_eq!(condwalk(&["oracle", "--law", "no-such-law", "--n", "3"]).status.code(), Some(1));
    assert_eq!(condwalk(&["oracle", "--law", "ssrw"]).status.code(), Some(1));
    assert_eq!(condwalk(&["run"]).status.code(), Some(1));
}

#[test]
fn failed_checks_exit_with_two() {
    // The bound is stated without the variance factor, so a wide law breaks it.
    let dir = tempfile::tempdir().unwrap();
    let law = dir.path().join("wide.law");
    fs::write(&law, "-3 1/2\n3 1/2\n").unwrap();
    let cfg = dir.path().join("fn.cfg");
    fs::write(&cfg, format!("law = {}\nexperiment = fuk-nagaev\n[grid]\nn = 1000\nx = 200\ny = 31.6\n", law.display())).unwrap();
    let o = condwalk(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
