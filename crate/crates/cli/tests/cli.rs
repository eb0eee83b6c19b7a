//! Scripted invocations of the `perpetual` binary and its exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BM_SMALL: &str = r#"
seed = 3
x = [0.0, 0.0, 0.0]
n = 400
dt = 0.02
horizon = { mode = "fixed", horizon = 50.0 }
process = { family = "bm", dim = 3 }

[[function]]
profile = "gaussian"
amplitude = 1.0
width = 1.0
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_perpetual"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn analytic_reports_the_bm_mean() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), BM_SMALL, &["analytic"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "analytic.json");
    let mean = v["result"]["reference"]["mean"].as_f64().unwrap();
    assert!((mean - 2.0).abs() < 1e-9);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["config"]["n"], 400);
}

#[test]
fn missing_key_is_a_config_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &BM_SMALL.replace("n = 400", ""), &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`n`"), "{}", stderr(&o));
    let o = run(
        dir.path(),
        &BM_SMALL.replace("dt = 0.02", ""),
        &["simulate"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`dt`"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &format!("{BM_SMALL}\nextra = true\n"),
        &["analytic"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &BM_SMALL.replace("dim = 3", "dim = 2"),
        &["analytic"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(
        dir.path(),
        &BM_SMALL.replace("width = 1.0", "width = -1.0"),
        &["analytic"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn oversized_run_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &BM_SMALL.replace("n = 400", "n = 1000000000000"),
        &["simulate"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("at most"), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic_and_self_describing() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run(a.path(), BM_SMALL, &["simulate", "--threads", "1"]);
    let ob = run(b.path(), BM_SMALL, &["simulate"]);
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    assert_eq!(ob.status.code(), Some(0), "{}", stderr(&ob));
    for name in ["simulate.json", "simulate.csv"] {
        let x = std::fs::read(a.path().join("out").join(name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let csv = std::fs::read_to_string(a.path().join("out/simulate.csv")).unwrap();
    assert!(csv.starts_with("# seed = 3\n# config = {"));
    let v = json(a.path(), "simulate.json");
    assert_eq!(v["result"]["n"], 400);
    assert!(v["result"]["std_error"].as_f64().unwrap() > 0.0);
    // simulate carries no reference, so nothing can fail
    assert_eq!(v["result"]["comparisons"][0]["verdict"], "n/a");
    assert!(a.path().join("out/timing.json").exists());

    let oc = run(b.path(), BM_SMALL, &["simulate", "--seed", "4"]);
    assert_eq!(oc.status.code(), Some(0));
    let v = json(b.path(), "simulate.json");
    assert_eq!(v["seed"], 4);
}

#[test]
fn corrupted_reference_fails_compare() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{BM_SMALL}\n[debug]\nanalytic_scale = 1.5\n");
    let o = run(dir.path(), &config, &["compare"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("mean"), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/compare.csv")).unwrap();
    assert!(
        csv.lines()
            .any(|l| l.starts_with("mean,") && l.ends_with(",fail")),
        "{csv}"
    );
}

#[test]
fn fbm_variance_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let config = BM_SMALL
        .replace(
            "family = \"bm\", dim = 3",
            "family = \"fbm\", dim = 3, hurst = 0.75",
        )
        .replace("horizon = 50.0", "horizon = 20.0");
    let o = run(dir.path(), &config, &["compare"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/compare.csv")).unwrap();
    assert!(
        csv.lines()
            .any(|l| l.starts_with("variance,") && l.ends_with(",n/a")),
        "{csv}"
    );
}

#[test]
fn asymmetric_kernel_names_symmetry() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
x = [0.0, 0.0, 0.0]
process = { family = "cpp", dim = 3, kernel = { family = "gaussian", variance = 1.0, shift = [0.5, 0.0, 0.0] } }
lattice = { extent = 8.0, points = 16 }
"#;
    let o = run(dir.path(), config, &["green0"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("symmetry"), "{}", stderr(&o));
    let v = json(dir.path(), "green0.json");
    assert_eq!(v["result"]["validation"]["checks"][0]["name"], "symmetry");
    assert_eq!(v["result"]["validation"]["checks"][0]["passed"], false);
}

#[test]
fn green0_gaussian_meets_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
seed = 1
x = [0.0, 0.0, 0.0]
process = { family = "cpp", dim = 3, kernel = { family = "gaussian", variance = 1.0 } }
lattice = { extent = 16.0, points = 32 }
[green0]
series_terms = 2000
compare_radius = 3.0
"#;
    let o = run(dir.path(), config, &["green0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path(), "green0.json");
    let oracle = &v["result"]["oracle"];
    assert!(
        oracle["sup_difference"].as_f64().unwrap() < 1e-3,
        "{oracle}"
    );
    assert_eq!(oracle["within_tolerance"], true);
    let field = std::fs::read_to_string(dir.path().join("out/green0_field.csv")).unwrap();
    let mut lines = field.lines();
    assert!(lines.next().unwrap().starts_with("# seed = 1"));
    assert!(lines.next().unwrap().starts_with("# config = "));
    assert_eq!(lines.next().unwrap(), "x0,x1,x2,g0");
    assert_eq!(lines.count(), 32 * 32 * 32);
}

#[test]
fn dump_paths_writes_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), BM_SMALL, &["simulate", "--dump-paths"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        let text = std::fs::read_to_string(dir.path().join(format!("out/paths/replicate_{i}.csv")))
            .unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "t,x0,x1,x2");
        assert!(rows[1].starts_with("0.0000000000000000e0,"));
        assert!(rows.len() > 2);
    }
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_perpetual"))
        .arg("analytic")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_perpetual"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
