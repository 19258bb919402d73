use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coagsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coagsens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn run_writes_tables_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.txt");
    fs::write(
        &cfg,
        "kernel = soot\nn = 100\nreplicates = 4\nt_end = 1\noutput_times = 0.5, 1\nseed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = coagsens(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--workers",
        "2",
        "--set",
        "replicates=3",
        "--set",
        "x_report=4",
        "--out",
        &out_arg(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let sens = fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    let mut lines = sens.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,size,mean,var,ci_low,ci_high,algorithm,N,L,eps,lambda,kernel,source"
    );
    assert_eq!(lines.count(), 8);
    assert!(sens.contains(",double,100,3,0.03,2.1,soot,simulation"));
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with("t,algorithm,count_1a,"));
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("seed = 9") && config.contains("workers = 2"));
}

#[test]
fn runs_are_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let args = |o: &str| {
        vec![
            "run".to_string(),
            "--set".into(),
            "n=200".into(),
            "--set".into(),
            "replicates=5".into(),
            "--set".into(),
            "t_end=1".into(),
            "--set".into(),
            "output_times=1".into(),
            "--out".into(),
            o.to_string(),
        ]
    };
    for name in ["a", "b"] {
        let o = out_arg(&dir.path().join(name));
        let a: Vec<String> = args(&o);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        assert!(coagsens(&refs).status.success());
    }
    assert_eq!(
        fs::read(dir.path().join("a/sensitivity.csv")).unwrap(),
        fs::read(dir.path().join("b/sensitivity.csv")).unwrap()
    );
}

#[test]
fn oracle_and_validate_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let res = coagsens(&[
        "oracle",
        "--set",
        "t_end=1",
        "--set",
        "output_times=1",
        "--set",
        "oracle_x_max=64",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(res.status.success());
    let text = fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",oracle")));

    let res = coagsens(&[
        "validate",
        "--set",
        "n=200",
        "--set",
        "t_end=1",
        "--set",
        "output_times=1",
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok")).count(), 4);
}

#[test]
fn converge_and_efficiency_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--set",
        "n_ladder=16,32,64,128",
        "--set",
        "nl_product=2048",
        "--set",
        "t_end=1",
        "--set",
        "output_times=1",
        "--set",
        "x_report=8",
    ];
    let mut args = vec!["converge"];
    args.extend(common);
    let o = out_arg(&dir.path().join("c"));
    args.extend(["--reference", "largest", "--out", &o]);
    let res = coagsens(&args);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let conv = fs::read_to_string(dir.path().join("c/convergence.csv")).unwrap();
    assert!(conv.starts_with("N,L,c_tot,slope_partial\n"));
    assert_eq!(conv.lines().count(), 1 + 3);

    let o = out_arg(&dir.path().join("e"));
    let res = coagsens(&[
        "efficiency",
        "--set",
        "n=200",
        "--set",
        "replicates=8",
        "--set",
        "t_end=1",
        "--set",
        "output_times=0.5,1",
        "--out",
        &o,
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let eff = fs::read_to_string(dir.path().join("e/efficiency.csv")).unwrap();
    assert!(eff.starts_with("t,algorithm,t_run_per_run_sec,total_variance,inefficiency\n"));
    assert_eq!(eff.lines().count(), 1 + 6);
}

#[test]
fn bad_input_fails_with_one_line() {
    for args in [
        vec!["run", "--set", "n=1"],
        vec!["run", "--set", "bogus=3"],
        vec!["run", "--set", "novalue"],
        vec!["run", "--config", "/nonexistent/config.txt"],
    ] {
        let res = coagsens(&args);
        assert!(!res.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&res.stderr);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "));
    }
}
