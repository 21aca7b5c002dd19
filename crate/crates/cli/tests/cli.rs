use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orthocond_cli::report::{self, render_chart};
use orthocond_cli::trace::{self, TraceRow, HEADER};
use orthocond_cli::{gradcheck, CliError};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_orthocond"));
    cmd.env_remove("ORTHOCOND_SEED_OVERRIDE");
    cmd
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#""classes": 3, "dim": 6, "samples_per_class": 40, "batch_size": 16, "epochs": 3, "seeds": [0, 1]"#;

fn run(config: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg("--config").arg(config).args(extra).output().unwrap()
}

#[test]
fn zero_epochs_reports_chance_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"schema_version": 1, "epochs": 0, "seeds": [3], "output_dir": "out"}"#);
    let out = run(&cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("out/trace_decorr_bn-none_seed3.csv")).unwrap();
    assert_eq!(trace, format!("{HEADER}\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_val_error"]["mean"], 75.0);
    assert_eq!(summary["chance_val_error"], 75.0);
    assert_eq!(summary["final_val_error"]["std"], "nan");
    assert_eq!(summary["mean_log10_kappa"], "nan");
}

#[test]
fn summary_keys_are_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!(r#"{{"schema_version": 1, {SMALL}}}"#));
    assert_eq!(code(&run(&cfg, &[])), 0);
    let text = fs::read_to_string(dir.path().join("results/summary.json")).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \""))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
    assert!(keys.contains(&"geo_mean_kappa") && keys.contains(&"final_val_error"));
}

#[test]
fn parallel_and_sequential_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &str| format!(r#"{{"schema_version": 1, {SMALL}, "policy": "nog+olr", "output_dir": "{out}", "flush_interval": 3}}"#);
    let a = write_config(dir.path(), "a.json", &body("a"));
    let b = write_config(dir.path(), "b.json", &body("b"));
    assert_eq!(code(&run(&a, &["--jobs", "1"])), 0);
    assert_eq!(code(&run(&b, &["--jobs", "4"])), 0);
    for name in ["trace_decorr_bn-nog+olr_seed0.csv", "trace_decorr_bn-nog+olr_seed1.csv", "summary.json"] {
        let x = fs::read(dir.path().join("a").join(name)).unwrap();
        let y = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn trace_rows_follow_flush_interval() {
    let dir = tempfile::tempdir().unwrap();
    // 3 classes × 32 training samples / 16 = 6 steps per epoch.
    let cfg = write_config(dir.path(), "c.json", &format!(r#"{{"schema_version": 1, {SMALL}, "flush_interval": 4}}"#));
    assert_eq!(code(&run(&cfg, &[])), 0);
    let rows = trace::read_trace(&dir.path().join("results/trace_decorr_bn-none_seed1.csv")).unwrap();
    let steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 4, 5, 8, 11, 12, 16, 17]);
    let epochs: Vec<usize> = rows.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![0, 0, 0, 1, 1, 2, 2, 2]);
}

#[test]
fn seed_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!(r#"{{"schema_version": 1, {SMALL}}}"#));
    let out = bin()
        .env("ORTHOCOND_SEED_OVERRIDE", "7,8")
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let mut names: Vec<String> = fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["summary.json", "trace_decorr_bn-none_seed7.csv", "trace_decorr_bn-none_seed8.csv"]);
    let bad = bin().env("ORTHOCOND_SEED_OVERRIDE", "x").args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn input_and_io_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("no_schema.json", "{}"),
        ("bad_json.json", "{ schema_version: 1"),
        ("bad_policy.json", r#"{"schema_version": 1, "policy": "ow+sn"}"#),
        ("bad_key.json", r#"{"schema_version": 1, "learning_rate": 0.1}"#),
    ] {
        let out = run(&write_config(dir.path(), name, body), &[]);
        assert_eq!(code(&out), 2, "{name}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&run(&dir.path().join("missing.json"), &[])), 2);

    fs::write(dir.path().join("blocker"), "").unwrap();
    let cfg = write_config(dir.path(), "io.json", r#"{"schema_version": 1, "output_dir": "blocker/out", "epochs": 0}"#);
    assert_eq!(code(&run(&cfg, &[])), 3);

    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 2);
    assert_eq!(code(&bin().args(["run"]).output().unwrap()), 2);
    assert_eq!(code(&bin().args(["--help"]).output().unwrap()), 0);
}

#[test]
fn gradcheck_default_passes_quickly() {
    let start = std::time::Instant::now();
    let out = bin().arg("gradcheck").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(start.elapsed().as_secs() < 60);
    let expected = gradcheck::registry().len() * gradcheck::DEFAULT_DIMS.len();
    assert!(stdout.contains(&format!("{expected} checks, 0 failed")), "{stdout}");
}

#[test]
fn gradcheck_zero_tolerance_fails() {
    let out = bin().args(["gradcheck", "--tol", "0", "--dims", "2,3"]).output().unwrap();
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("meta_sqrt d=2") && stderr.contains("network_pre_svd d=3"), "{stderr}");
}

#[test]
fn gradcheck_subset_matches_registry() {
    let out = bin().args(["gradcheck", "--dims", "2", "--seeds", "1"]).output().unwrap();
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let n = gradcheck::registry().len();
    assert!(stdout.contains(&format!("{n} checks, 0 failed")), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains(" d=2 ")).count(), n);
    assert_eq!(code(&bin().args(["gradcheck", "--dims", "17"]).output().unwrap()), 2);
}

fn flat_row(step: usize, val_error: f64) -> TraceRow {
    TraceRow {
        step,
        epoch: step / 10,
        loss: 1.0,
        val_error,
        log10_kappa: 0.0,
        eta_used: 0.05,
        grad_ortho_residual: 0.0,
        weight_ortho_residual: 0.0,
        svd_failures: 0,
    }
}

#[test]
fn report_constant_kappa_is_flat_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<TraceRow> = (0..30).step_by(5).map(|s| flat_row(s, 12.5)).collect();
    trace::write_trace(&dir.path().join(trace::file_name("decorr_bn-none", 0)), &rows).unwrap();
    let mut sink = Vec::new();
    let rep = report::cmd_report(dir.path(), true, &mut sink).unwrap();
    let v = rep.groups[0].val_error();
    assert_eq!(v.min, v.mean);
    assert_eq!(rep.groups[0].kappa_series(), rows.iter().map(|r| (r.step, 0.0)).collect::<Vec<_>>());

    let svg = fs::read_to_string(rep.chart.unwrap()).unwrap();
    assert_eq!(svg, render_chart(&rep.groups));
    let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    let ys: Vec<&str> = points.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
    assert_eq!(ys.len(), rows.len());
    assert!(ys.iter().all(|y| *y == ys[0]));
    // The horizontal axis is drawn at log10 κ = 0.
    assert!(svg.contains(&format!(" V{} H", ys[0])));
    let text = String::from_utf8(sink).unwrap();
    assert!(text.contains("ordering: skipped"));
}

#[test]
fn report_mean_std_min_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, err) in [(0, 19.0), (1, 21.0)] {
        let rows = vec![flat_row(0, 50.0), flat_row(9, err)];
        trace::write_trace(&dir.path().join(trace::file_name("gcp-nog", seed)), &rows).unwrap();
    }
    let mut sink = Vec::new();
    let rep = report::cmd_report(dir.path(), false, &mut sink).unwrap();
    let v = rep.groups[0].val_error();
    assert_eq!(v.mean, 20.0);
    assert!((v.std - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(v.min, 19.0);
    assert!(rep.chart.is_none());
    assert!(String::from_utf8(sink).unwrap().contains("20.00 ± 1.41"));
}

#[test]
fn report_rejects_malformed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(trace::file_name("decorr_bn-ow", 4));
    fs::write(&path, format!("{HEADER}\n0,0,1,2,3,4,5,6,0\n1,0,1,2,three,4,5,6,0\n")).unwrap();
    let out = bin().arg("report").arg("--dir").arg(dir.path()).output().unwrap();
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("{}:3:", path.display())), "{stderr}");

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin().arg("report").arg("--dir").arg(empty.path()).output().unwrap()), 2);
    assert!(matches!(
        report::cmd_report(&empty.path().join("nope"), false, &mut Vec::new()),
        Err(CliError::Input(_))
    ));
}

#[test]
fn report_reads_what_run_writes() {
    let dir = tempfile::tempdir().unwrap();
    for policy in ["none", "ow"] {
        let cfg = write_config(
            dir.path(),
            &format!("{policy}.json"),
            &format!(r#"{{"schema_version": 1, {SMALL}, "policy": "{policy}", "output_dir": "sweep/{policy}"}}"#),
        );
        assert_eq!(code(&run(&cfg, &[])), 0);
    }
    let first = fs::read_to_string(dir.path().join("sweep/ow/trace_decorr_bn-ow_seed0.csv")).unwrap();
    assert_eq!(first.lines().next(), Some(HEADER));
    let out = bin().arg("report").arg("--dir").arg(dir.path().join("sweep")).arg("--chart").output().unwrap();
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("decorr_bn-none") && stdout.contains("decorr_bn-ow"), "{stdout}");
    assert!(dir.path().join("sweep").join(report::CHART_FILE).exists());
}

#[test]
fn report_ordering_line_fails_when_reversed() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, kappa) in [("none", 1.0), ("nog", 2.0), ("ow", 3.0)] {
        let rows: Vec<TraceRow> = (0..3).map(|s| TraceRow { log10_kappa: kappa, ..flat_row(s, 10.0) }).collect();
        trace::write_trace(&dir.path().join(trace::file_name(&format!("decorr_bn-{policy}"), 0)), &rows).unwrap();
    }
    let out = bin().arg("report").arg("--dir").arg(dir.path()).output().unwrap();
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("none lowest on seeds [0]: FAIL"), "{stdout}");
}
