use std::path::PathBuf;
use std::process::{Command, Output};

fn dlk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlk")).args(args).env_remove("DLK_TOL").output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("dlk-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn catalog_lists_six_sorted_entries() {
    let o = dlk(&["catalog"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(ids, ["coupled_riccati", "ks3", "linear2d", "riccati", "riccati_system", "schwarz_traveling"]);
    let ks3: Vec<&str> = text.lines().find(|l| l.starts_with("ks3 ")).unwrap().split_whitespace().collect();
    assert_eq!(&ks3[1..3], ["3", "3"]);
    let json = dlk(&["catalog", "--json"]);
    assert!(stdout(&json).trim_start().starts_with('['));
}

#[test]
fn verify_reports_and_exit_codes() {
    let o = dlk(&["verify", "ks3", "--points", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let o = dlk(&["verify", "riccati_system", "--points", "10"]);
    assert!(stdout(&o).contains("hamiltonian iota_X4 omega_RS + dh4"));
    assert_eq!(dlk(&["verify", "nosuch"]).status.code(), Some(64));
    assert_eq!(dlk(&["verify", "ks3", "--tol", "1e-30"]).status.code(), Some(2));
    let env = Command::new(env!("CARGO_BIN_EXE_dlk")).args(["verify", "ks3"]).env("DLK_TOL", "1e-30").output().unwrap();
    assert_eq!(env.status.code(), Some(2));
    assert_eq!(dlk(&["verify"]).status.code(), Some(64));
    assert_eq!(dlk(&["frobnicate"]).status.code(), Some(64));
}

#[test]
fn integrate_writes_the_whole_grid() {
    let dir = scratch("integrate");
    let out = dir.join("riccati.csv");
    let o = dlk(&["integrate", "riccati", "--x0", "0", "--t1", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1002);
    let last: f64 = csv.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((last - 1f64.tan()).abs() <= 1e-8);
    let o = dlk(&["integrate", "ks3", "--coeff", "sin(t)", "--coeff", "0", "--coeff", "1", "--x0", "0,1,1", "--t0", "3.141592653589793", "--t1", "8.141592653589793"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 5002);
}

#[test]
fn integrate_guard_exit_keeps_the_partial_trajectory() {
    let o = dlk(&["integrate", "ks3", "--coeff", "sin(t)", "--coeff", "0", "--coeff", "1", "--x0", "0,1,0", "--t1", "5"]);
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    assert!(text.lines().last().unwrap().starts_with("# guard_exit t="));
    assert!(text.lines().count() > 100);
}

#[test]
fn integrate_usage_errors() {
    assert_eq!(dlk(&["integrate", "riccati", "--x0", "0,1", "--t1", "1"]).status.code(), Some(64));
    assert_eq!(dlk(&["integrate", "riccati", "--x0", "0", "--t1", "-1"]).status.code(), Some(64));
    assert_eq!(dlk(&["integrate", "riccati", "--x0", "0", "--t1", "1", "--coeff", "sin("]).status.code(), Some(64));
}

#[test]
fn invariants_from_integration_and_from_file() {
    let dir = scratch("invariants");
    let o = dlk(&[
        "invariants", "coupled_riccati", "--names", "C", "--x0=-2,-3,-4,-5", "--t1", "5", "--out-dir", dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.join("C.csv")).unwrap();
    assert!(csv.starts_with("t,value\n"));
    assert!(csv.lines().last().unwrap().starts_with("# max_abs_drift="));

    let traj = dir.join("pair.csv");
    let o = dlk(&[
        "integrate", "ks3_pair", "--coeff", "sin(t)", "--coeff", "0", "--coeff", "1", "--x0", "0,1,1,1,2,1",
        "--t0", "3.141592653589793", "--t1", "8.141592653589793", "--out", traj.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = dlk(&["invariants", "ks3_pair", "--names", "I,U2,U3", "--trajectory", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" ok")).count(), 3);
    assert_eq!(dlk(&["invariants", "ks3", "--names", "I", "--x0", "0,1,1", "--t1", "1"]).status.code(), Some(64));
}

#[test]
fn superpose_summaries() {
    let dir = scratch("superpose");
    let out = dir.join("mixed.csv");
    let o = dlk(&[
        "superpose", "mixed", "--coeff", "0.5+0.1*t", "--coeff", "0", "--coeff", "1", "--inputs", "1,2;0,1", "--target=0,1,-3",
        "--t1", "3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("rule=mixed max_err="));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("t,target_x,target_v,target_a,rec_x,rec_v,rec_a,err\n"));
    let o = dlk(&["superpose", "riccati", "--coeff", "1", "--coeff", "sin(t)", "--coeff", "0.3", "--inputs=-2;-3;-4", "--target=-5", "--t1", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(dlk(&["superpose", "bogus", "--inputs", "1", "--target", "1", "--t1", "1"]).status.code(), Some(64));
}

#[test]
fn skdv_grid_and_residuals() {
    let dir = scratch("skdv");
    let out = dir.join("grid.csv");
    let o = dlk(&["skdv", "--v0", "2", "--nt", "21", "--nx", "31", "--tol", "1e-2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(dlk(&["skdv", "--v0", "2", "--nt", "21", "--nx", "31"]).status.code(), Some(2));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("t\\x,"));
    assert_eq!(csv.lines().count(), 22);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 32);
    let o = dlk(&["skdv", "--v0", "2", "--mobius", "1,0,2,1"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(dlk(&["skdv", "--v0", "1", "--kind", "rational"]).status.code(), Some(64));
}

#[test]
fn output_is_deterministic() {
    let a = dlk(&["verify", "coupled_riccati", "--seed", "3"]);
    let b = dlk(&["verify", "coupled_riccati", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let c = dlk(&["verify", "coupled_riccati", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
}
