use std::collections::HashMap;
use std::path::Path;

use spectrum_share::cli::cli_main;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("specshare").chain(args.iter().copied()))
}

fn kv(path: &Path) -> HashMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn num(m: &HashMap<String, String>, k: &str) -> f64 {
    m[k].parse().unwrap()
}

#[test]
fn frontier_writes_one_row_per_level_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pclc.csv");
    let code = run(&[
        "--set", "sample.n=3000", "frontier", "--kind", "pclc", "--levels", "0:0.1:1.0", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,level,c_p,c_s,converged,residuals"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.starts_with("pclc,") && r.split(',').count() == 6));

    let meta = kv(&dir.path().join("pclc.csv.meta"));
    assert_eq!(meta["n"], "3000");
    assert_eq!(meta["seed"], "1");
    assert_eq!(meta["config_hash"].len(), 64);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# small run\nsample.n = 500\nsample.seed = 3\npu.policy = wf\n").unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let base = ["--config", cfg.to_str().unwrap(), "frontier", "--kind", "aipc", "--levels", "0,0.5,1"];
    assert_eq!(run(&[&base[..], &["--out", a.to_str().unwrap()]].concat()), 0);
    assert_eq!(run(&[&base[..], &["--set", "sample.seed=4", "--out", b.to_str().unwrap()]].concat()), 0);
    let (ma, mb) = (kv(&dir.path().join("a.csv.meta")), kv(&dir.path().join("b.csv.meta")));
    assert_eq!((ma["seed"].as_str(), mb["seed"].as_str()), ("3", "4"));
    assert_ne!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn unlimited_gamma_has_no_interference_price() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dump) = (dir.path().join("sum.txt"), dir.path().join("dump.csv"));
    let code = run(&[
        "--set", "sample.n=800", "solve-aipc", "--gamma", "inf", "--dump", dump.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let s = kv(&out);
    assert_eq!(num(&s, "nu"), 0.0);
    assert_eq!(s["converged"], "true");
    let dump = std::fs::read_to_string(dump).unwrap();
    assert!(dump.starts_with("index,p,gp\n"));
    assert_eq!(dump.lines().count(), 801);
}

#[test]
fn solve_pclc_accepts_either_loss_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sum.txt");
    for flag in [["--loss-fraction", "0.05"], ["--c-delta", "0.1"]] {
        let code = run(&["--set", "sample.n=800", "solve-pclc", flag[0], flag[1], "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let s = kv(&out);
        assert!(num(&s, "protection_slack") >= -1e-6);
        assert!(num(&s, "c_s") > 0.0);
    }
}

#[test]
fn mac_bound_sum_exceeds_each_single_user_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mac.txt");
    for policy in ["aipc", "pclc"] {
        let code = run(&["--set", "sample.n=1500", "mac-bound", "--policy", policy, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let m = kv(&out);
        assert_eq!(m["inside"], "true");
        assert!(num(&m, "sum_bound") >= num(&m, "pu_bound").max(num(&m, "su_bound")));
    }
}

#[test]
fn sample_round_trips_through_the_ensemble_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ens = dir.path().join("ens.txt");
    assert_eq!(run(&["sample", "--n", "4", "--seed", "8", "--out", ens.to_str().unwrap()]), 0);
    let out = dir.path().join("oracle.txt");
    let code = run(&["oracle", "--problem", "p1", "--ensemble", ens.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let o = kv(&out);
    assert_eq!(o["states"], "4");
    assert!(num(&o, "relative_difference").abs() <= 1e-3);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(&["bogus"]), 0);
    assert_ne!(run(&["--set", "no.such.key=1", "sample"]), 0);
    assert_ne!(run(&["--set", "sample.n=0", "sample"]), 0);
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "sample.n 5\n").unwrap();
    assert_ne!(run(&["--config", bad.to_str().unwrap(), "sample"]), 0);
    assert_ne!(run(&["--config", dir.path().join("missing.conf").to_str().unwrap(), "sample"]), 0);
    assert_ne!(run(&["frontier", "--levels", "0.5:0.1:0.2"]), 0);
    let unwritable = dir.path().join("no-dir").join("out.csv");
    assert_ne!(run(&["--set", "sample.n=10", "sample", "--out", unwritable.to_str().unwrap()]), 0);
    assert_ne!(run(&["--set", "sample.n=10", "oracle", "--problem", "p3"]), 0);
}
