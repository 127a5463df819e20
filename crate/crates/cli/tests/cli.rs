use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dilated(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilated"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("DILATED_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn clt_rademacher_converges_and_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = dilated(tmp.path(), &["clt", "--measure", "rademacher", "--l", "2.5", "--iters", "20"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    assert_eq!(lines.next(), Some("iteration,d_to_target,d_successive,ratio,grading_drift"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 21);
    let last: f64 = rows[20].split(',').nth(1).unwrap().parse().unwrap();

    let r = report(tmp.path());
    assert_eq!(r["report"]["verdict"], "converged");
    assert!(last <= r["report"]["target_tol"].as_f64().unwrap());
}

#[test]
fn gaussian_is_a_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let out = dilated(tmp.path(), &["clt", "--measure", "gaussian:0,1", "--l", "2.5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(tmp.path())["report"]["iterations"], 1);
}

#[test]
fn exponent_outside_the_kind_interval_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&dilated(tmp.path(), &["clt", "--l", "1.5"])), 2);
    assert_eq!(code(&dilated(tmp.path(), &["lln", "--l", "2.5"])), 2);
    assert!(!tmp.path().join("report.json").exists());
}

#[test]
fn lln_runs() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&dilated(tmp.path(), &["lln", "--measure", "bernoulli:0.3", "--l", "1.5"])), 0);
    let out = dilated(tmp.path(), &["lln", "--measure", "dirac:0.3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(tmp.path())["report"]["iterations"], 1);
}

#[test]
fn missing_rescale_diverges() {
    let tmp = TempDir::new().unwrap();
    let out = dilated(tmp.path(), &["lln", "--measure", "rademacher", "--rescale", "1"]);
    assert_eq!(code(&out), 3);
    assert_eq!(report(tmp.path())["report"]["verdict"], "diverged");
}

#[test]
fn tight_tolerance_exhausts_the_budget() {
    let tmp = TempDir::new().unwrap();
    let out = dilated(tmp.path(), &["clt", "--iters", "3", "--tol", "1e-12"]);
    assert_eq!(code(&out), 4);
    let r = report(tmp.path());
    assert_eq!(r["report"]["iterations"], 3);
    assert_eq!(r["report"]["verdict"], "inconclusive");
}

#[test]
fn distance_command() {
    let tmp = TempDir::new().unwrap();
    let same = dilated(tmp.path(), &["distance", "rademacher", "rademacher", "--l", "2.5"]);
    assert_eq!((code(&same), stdout(&same).trim()), (0, "0"));

    let gated = dilated(tmp.path(), &["distance", "dirac:0", "dirac:1", "--l", "1.5"]);
    assert_eq!(stdout(&gated).trim(), "inf");
    assert!(String::from_utf8_lossy(&gated.stderr).contains("moment gate"));

    let value = |extra: &[&str]| {
        let mut args = vec!["distance", "rademacher", "gaussian:0,1", "--l", "2.5"];
        args.extend_from_slice(extra);
        stdout(&dilated(tmp.path(), &args)).trim().parse::<f64>().unwrap()
    };
    let (base, dense) = (value(&[]), value(&["--grid-dense"]));
    assert!(base > 0.0 && base.is_finite());
    assert!((dense - base).abs() <= 0.01 * base, "{base} vs {dense}");

    assert_eq!(code(&dilated(tmp.path(), &["distance", "rademacher", "binomial:3"])), 2);
    assert_eq!(code(&dilated(tmp.path(), &["distance", "uniform:0,1", "dirac:0"])), 2);
}

#[test]
fn lattice_file_spec() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("mu.json");
    fs::write(&file, r#"{"dim": 1, "spacing": [2.0], "offset": [-1.0], "weights": [0.5, 0.5]}"#).unwrap();
    let spec = format!("lattice:@{}", file.display());
    let out = dilated(tmp.path(), &["distance", &spec, "rademacher"]);
    assert_eq!(stdout(&out).trim(), "0");
    assert_eq!(code(&dilated(tmp.path(), &["distance", "lattice:@/nonexistent.json", "rademacher"])), 2);
}

#[test]
fn observable_cos_on_the_circle() {
    let tmp = TempDir::new().unwrap();
    let args = ["observable", "--sampler", "circle", "--H", "cos", "--samples", "100000", "--bins", "2048"];
    assert_eq!(code(&dilated(tmp.path(), &args)), 0);
    assert_eq!(report(tmp.path())["report"]["verdict"], "converged");
}

#[test]
fn observable_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&dilated(tmp.path(), &["observable", "--H", "const:1", "--samples", "1000"])), 2);
    let unbounded = dilated(tmp.path(), &["observable", "--H", "poly:0,0,10", "--bound", "5", "--samples", "1000"]);
    assert_eq!(code(&unbounded), 5);
    assert_eq!(code(&dilated(tmp.path(), &["observable", "--H", "tan"])), 2);
}

#[test]
fn small_samples_still_finish() {
    // Ten samples give a coarse histogram; the exit code is recorded, not
    // prescribed, beyond being one of the run outcomes.
    let tmp = TempDir::new().unwrap();
    let out = dilated(tmp.path(), &["observable", "--samples", "10", "--bins", "64"]);
    assert!([0, 4].contains(&code(&out)), "{out:?}");
    assert!(tmp.path().join("convergence.csv").exists());
}

#[test]
fn selfcheck() {
    let tmp = TempDir::new().unwrap();
    let ok = dilated(tmp.path(), &["selfcheck"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout(&ok).lines().count(), 4);

    let broken = dilated(tmp.path(), &["selfcheck", "--break-unit"]);
    assert_eq!(code(&broken), 1);
    assert!(String::from_utf8_lossy(&broken.stderr).contains("unit law"));

    let one = dilated(tmp.path(), &["selfcheck", "--suite", "quantale"]);
    assert_eq!(code(&one), 0);
    let text = stdout(&one);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("quantale: ok"));
}

#[test]
fn outputs_do_not_depend_on_threads_or_repetition() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip(["1", "4", "4"]) {
        let out = dilated(dir.path(), &["--threads", threads, "observable", "--samples", "20000", "--bins", "512"]);
        assert_eq!(code(&out), 0);
    }
    for name in ["report.json", "convergence.csv"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(a, fs::read(d.path().join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["observable", "--samples", "5000", "--bins", "256", "--iters", "4", "--tol", "1"];
    let from_env = Command::new(env!("CARGO_BIN_EXE_dilated"))
        .arg("--out-dir")
        .arg(a.path())
        .args(args)
        .env("DILATED_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&from_env), 0);
    let out = dilated(b.path(), &[&["--seed", "7"], &args[..]].concat());
    assert_eq!(code(&out), 0);
    assert_eq!(report(a.path())["config"]["seed"], 7);
    assert_eq!(
        fs::read(a.path().join("report.json")).unwrap(),
        fs::read(b.path().join("report.json")).unwrap()
    );
}
