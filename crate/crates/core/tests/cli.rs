use std::fs;
use std::path::Path;
use std::process::Command;

use ma_boundary::cli::main_with_args;
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["ma-boundary", cmd, "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    main_with_args(args)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const BARRIER: &str = "command = \"verify-barrier\"\n[problem]\nn = 2\nk = 1.0\n[profile]\na = [2.0]\neta = [1.0]\n\
                       [barrier]\nd0 = 0.5\ndiam = 2.0\nsamples = 10000\n";

#[test]
fn verify_barrier_example() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.toml", BARRIER);
    let out = tmp.path().join("out");
    assert_eq!(run("verify-barrier", &cfg, &out, &["--seed", "5"]), 0);
    let r = report(&out);
    let eps0 = r["details"]["epsilon"]["epsilon0"].as_f64().unwrap();
    assert!(eps0 > 0.0 && eps0 <= 0.03125);
    assert_eq!(r["seed"], 5);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let hist = fs::read_to_string(out.join("h_histogram.csv")).unwrap();
    assert!(hist.starts_with("#schema=1\nlog10_h_lo,log10_h_hi,count\n"));
    let counts: usize = hist.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counts, 10_000);
}

#[test]
fn hypothesis_violation_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.toml", &BARRIER.replace("a = [2.0]", "a = [1.5]"));
    let out = tmp.path().join("out");
    assert_eq!(run("verify-barrier", &cfg, &out, &[]), 1);
    let r = report(&out);
    assert!(r["error"].as_str().unwrap().contains("hypothesis"));
}

#[test]
fn malformed_configs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (i, text) in [
        "[problem\nn = 2\n",
        "[problem]\nn = 2\nbogus = 1\n",
        "[profile]\na = \"two\"\n",
        "command = \"solve\"\n",
        "[problem]\nn = 2\n[profile]\na = [0.5]\n",
        "[problem]\nn = 2\nk = -1.0\n",
    ]
    .iter()
    .enumerate()
    {
        let cfg = write(tmp.path(), &format!("bad{i}.toml"), text);
        assert_eq!(run("verify-barrier", &cfg, &out, &[]), 2, "config {i}: {text}");
    }
    assert_eq!(run("verify-barrier", "/nonexistent/config.toml", &out, &[]), 2);
    assert_eq!(main_with_args(["ma-boundary", "frobnicate"]), 2);
}

#[test]
fn binary_reports_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", "[grid]\nspacing = \"x\"\n");
    let status = Command::new(env!("CARGO_BIN_EXE_ma-boundary"))
        .args(["solve", "--config", &bad, "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

const SOLVE: &str = "command = \"solve\"\n[problem]\nn = 2\nkind = \"constant\"\nrhs = 1.0\n[domain]\nkind = \"ball\"\n\
                     radius = 1.0\n[grid]\nspacing = 0.0625\n";

#[test]
fn solve_constant_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SOLVE);
    let out = tmp.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &["--threads", "1"]), 0);
    let r = report(&out);
    let c = r["details"]["center_value"].as_f64().unwrap();
    assert!((c + 0.5).abs() <= 0.01);
    let snap = fs::read_to_string(out.join("solution.txt")).unwrap();
    let first: Vec<f64> = snap.lines().next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(first.len(), 4);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for f in manifest["files"].as_array().unwrap() {
        assert!(out.join(f["path"].as_str().unwrap()).exists());
    }
}

#[test]
fn iteration_cap_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[problem]\nn = 2\nkind = \"degenerate\"\nq = 1.0\n[grid]\nspacing = 0.0625\n[solver]\nmax_outer = 1\n";
    let cfg = write(tmp.path(), "s.toml", text);
    let out = tmp.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]), 1);
    let r = report(&out);
    assert!(r["error"].as_str().unwrap().contains("did not converge"));
    assert_eq!(r["details"]["history"].as_array().unwrap().len(), 1);
}

#[test]
fn command_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SOLVE);
    assert_eq!(run("sweep", &cfg, &tmp.path().join("out"), &[]), 2);
}

#[test]
fn theta_sweep_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "command = \"sweep\"\n[problem]\nn = 2\nk = 1.0\n[sweep]\na = [2.0, 3.0, 4.0]\ncertify = true\n\
                [barrier]\nsamples = 2000\n";
    let cfg = write(tmp.path(), "w.toml", text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("sweep", &cfg, &a, &["--seed", "9"]), 0);
    assert_eq!(run("sweep", &cfg, &b, &["--seed", "9", "--threads", "1"]), 0);
    let csv = fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("sweep.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("report.json")).unwrap(),
        fs::read_to_string(b.join("report.json")).unwrap()
    );
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "#schema=1");
    let header: Vec<&str> = lines[1].split(',').collect();
    let col = header.iter().position(|h| *h == "predicted").unwrap();
    let theta: Vec<f64> = lines[2..].iter().map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    let expected = [0.5, 11.0 / 24.0, 0.4375];
    for (t, e) in theta.iter().zip(expected) {
        assert!((t - e).abs() < 1e-15);
    }
}

#[test]
fn lambda_sweep_ratio_column() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[problem]\nn = 4\nkind = \"degenerate\"\nq = 1.0\n[sweep]\nmode = \"lambda\"\na = [inf]\nlambda0 = 0.75\n";
    let cfg = write(tmp.path(), "l.toml", text);
    let out = tmp.path().join("out");
    assert_eq!(run("sweep", &cfg, &out, &[]), 0);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 31);
    assert_eq!(rows[1][5], "0.6875");
    for r in &rows[1..] {
        assert_eq!(r[7], "0.25");
    }
}

#[test]
fn iterate_exponents_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[problem]\nn = 4\nkind = \"degenerate\"\nq = 1.0\n[profile]\na = [inf, inf, inf]\n\
                [iterate]\nregime = \"downward\"\nsteps = 10\n";
    let cfg = write(tmp.path(), "i.toml", text);
    let out = tmp.path().join("out");
    assert_eq!(run("iterate-exponents", &cfg, &out, &[]), 0);
    let r = report(&out);
    assert_eq!(r["details"]["lambda0"], 0.75);
    assert_eq!(r["details"]["lambda1"], 0.6875);
    let csv = fs::read_to_string(out.join("lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 11);
}

#[test]
fn radial_fit_exponent() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[problem]\nn = 2\nkind = \"singular\"\nk = 1.0\n[fit]\nsource = \"radial\"\ntolerance = 0.01\n";
    let cfg = write(tmp.path(), "f.toml", text);
    let out = tmp.path().join("out");
    assert_eq!(run("fit-exponent", &cfg, &out, &[]), 0);
    let r = report(&out);
    let l = r["details"]["fit"]["lambda_hat"].as_f64().unwrap();
    assert!((l - 0.5).abs() <= 0.01);
    assert!((r["details"]["u0"].as_f64().unwrap() + 1.0).abs() < 1e-6);
}
