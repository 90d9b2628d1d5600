use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intermittent"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn unknown_flag_exits_1_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let res = run(&["fixed-point", "--no-such-flag", "3"], &out);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn help_exits_0() {
    let res = Command::new(env!("CARGO_BIN_EXE_intermittent"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("fixed-point"));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let res = run(&["fixed-point", "--n-cells", "1000"], &out);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.lines().any(|l| l.contains("`n_cells`")), "{err}");
    assert!(!out.exists());

    let res = run(&["converge", "--epsilon", "0.5"], &out);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`epsilon`"));
}

#[test]
fn fixed_point_report_and_density() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let res = run(
        &[
            "fixed-point",
            "--gamma-star",
            "0.5",
            "--epsilon",
            "0",
            "--n-cells",
            "1024",
        ],
        out,
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let r = report(out);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["status"], "pass");
    assert_eq!(r["config"]["n_cells"], 1024);
    assert!(r["timestamp"].is_u64());
    assert!(r["result"]["residual_l1"].as_f64().unwrap() <= 1e-5);
    assert_eq!(r["result"]["coupling"].as_array().unwrap().len(), 2);
    assert!(r["result"]["cone_report"]["pass"].is_boolean());
    let csv = std::fs::read_to_string(out.join("density_fixed_point.csv")).unwrap();
    assert!(csv.starts_with("x,value\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 1025);
}

#[test]
fn failed_check_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "fixed-point",
            "--n-cells",
            "256",
            "--residual-tol",
            "1e-300",
        ],
        tmp.path(),
    );
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(report(tmp.path())["status"], "fail");
}

#[test]
fn verify_assumptions_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "verify-assumptions",
            "--gamma-star",
            "0.5",
            "--eps-star",
            "0.1",
            "--assumption-nodes",
            "4000",
        ],
        tmp.path(),
    );
    assert_eq!(res.status.code(), Some(0));
    let r = report(tmp.path());
    let b = r["result"]["report"]["constants"]["b"].as_array().unwrap();
    assert_eq!(b.len(), 3);
    assert!(b.iter().all(|v| v.as_f64().unwrap() > 0.0));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    std::fs::write(
        &cfg,
        "# small run\nepsilon = 0.07\nn-cells = 512\nseed = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let res = run(
        &[
            "fixed-point",
            "--config",
            cfg.to_str().unwrap(),
            "--epsilon",
            "0.01",
        ],
        &out,
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let c = &report(&out)["config"];
    assert_eq!(c["epsilon"], 0.01);
    assert_eq!(c["n_cells"], 512);
    assert_eq!(c["seed"], 9);
    assert_eq!(c["command"], "fixed-point");

    std::fs::write(&cfg, "flavour = strange\n").unwrap();
    let res = run(
        &["fixed-point", "--config", cfg.to_str().unwrap()],
        &tmp.path().join("p"),
    );
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`flavour`"));
}

#[test]
fn identical_runs_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "ensemble",
        "--n-cells",
        "256",
        "--n-particles",
        "2000",
        "--n-steps",
        "50",
        "--seed",
        "4",
    ];
    let mut reports = Vec::new();
    for _ in 0..2 {
        let res = run(&args, tmp.path());
        assert!(matches!(res.status.code(), Some(0) | Some(2)));
        let mut r = report(tmp.path());
        r.as_object_mut().unwrap().remove("timestamp");
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    let hist = std::fs::read_to_string(tmp.path().join("histogram_ensemble.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count\n"));
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 2000);
    let coupling = std::fs::read_to_string(tmp.path().join("coupling_ensemble.csv")).unwrap();
    assert!(coupling.starts_with("step,s,c\n"));
}

#[test]
fn converge_writes_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "converge",
            "--n-cells",
            "512",
            "--n-steps",
            "150",
            "--fit-window",
            "10:50",
        ],
        tmp.path(),
    );
    assert!(matches!(res.status.code(), Some(0) | Some(2)));
    let csv = std::fs::read_to_string(tmp.path().join("distances_converge.csv")).unwrap();
    assert!(csv.starts_with("n,d_n,bound\n"));
    assert_eq!(csv.lines().count(), 151);
    assert_eq!(
        report(tmp.path())["result"]["front_window"],
        serde_json::json!([10, 50])
    );
}

#[test]
fn sequence_lemma_reports_reference_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "sequence-lemma",
            "--n-instances",
            "5",
            "--sequence-length",
            "60",
        ],
        tmp.path(),
    );
    assert!(matches!(res.status.code(), Some(0) | Some(2)));
    let r = report(tmp.path());
    let c = &r["result"]["c_beta_gamma"];
    assert_eq!(c["n_max"], 10_000);
    assert!(c["value"].as_f64().unwrap() > 1.0);
    assert_eq!(r["result"]["instances"], 5);
}
