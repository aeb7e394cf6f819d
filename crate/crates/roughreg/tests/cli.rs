use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roughreg::{report_schema_version, Report};

/// Runs in `dir`, writing there unless `args` name another `--out`.
fn roughreg(args: &[&str], dir: &Path) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_roughreg"));
    c.args(args).current_dir(dir);
    if !args.contains(&"--out") {
        c.arg("--out").arg(dir);
    }
    c.output().expect("binary runs")
}

fn bare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughreg")).args(args).output().expect("binary runs")
}

fn report(dir: &Path, scenario: &str) -> Report {
    Report::from_json(&fs::read_to_string(dir.join(format!("{scenario}.json"))).unwrap()).unwrap()
}

fn metric(r: &Report, k: &str) -> f64 {
    r.metrics[k].as_f64().unwrap_or_else(|| panic!("metric {k}: {:?}", r.metrics.get(k)))
}

#[test]
fn rde_smooth_exp_example() {
    let d = tempfile::tempdir().unwrap();
    let o = roughreg(&["rde", "--driver", "smooth", "--f", "exp", "--n", "2048"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(d.path(), "rde");
    assert!(r.pass);
    assert!(metric(&r, "sup_error_closed_form") <= 1e-6);
    assert_eq!(r.params["n"], "2048");
    let csv = fs::read_to_string(d.path().join("rde-path.csv")).unwrap();
    assert!(csv.starts_with("index,t,z0\n"));
    assert_eq!(csv.lines().count(), 2050);
}

#[test]
fn hopf_check_example_is_exact() {
    let d = tempfile::tempdir().unwrap();
    let o = roughreg(&["hopf-check", "--spec", "pam", "--cutoff", "2"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(d.path(), "hopf-check");
    let residuals: Vec<(&String, f64)> = r
        .metrics
        .iter()
        .filter(|(k, _)| k.ends_with("_residual_terms"))
        .map(|(k, v)| (k, v.as_f64().unwrap()))
        .collect();
    assert!(residuals.len() >= 7);
    assert!(residuals.iter().all(|(_, v)| *v == 0.0), "{residuals:?}");
}

#[test]
fn noise_regularity_example() {
    let d = tempfile::tempdir().unwrap();
    let o = roughreg(&["noise-reg", "--d", "1", "--seeds", "100"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(d.path(), "noise-reg");
    assert!((metric(&r, "fitted_regularity") + 0.5).abs() <= 0.1);
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["besov", "--bogus", "1"],
        vec!["besov", "--n", "100"],
        vec!["besov", "--r", "abc"],
        vec!["besov", "--p", "3"],
        vec!["besov", "--n"],
        vec!["nosuch"],
        vec!["bphz", "--samples", "4"],
        vec!["model-build", "--prep", "missing.txt"],
    ] {
        let o = roughreg(&args, d.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    }
}

#[test]
fn numerical_failures_exit_3() {
    let d = tempfile::tempdir().unwrap();
    // a failed check still writes the report
    let o = roughreg(&["rde", "--n", "8"], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(!report(d.path(), "rde").pass);
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed check sup_error_closed_form"));
    // a core routine refusing the grid
    let o = roughreg(&["model-verify", "--d", "2", "--n", "16"], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical failure"));
}

#[test]
fn config_file_with_flag_override() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("young.cfg");
    fs::write(&cfg, "# Young integral\nscenario = young\nn = 64\nintegrand = cubic\n").unwrap();
    let o = roughreg(&["young", "--config", cfg.to_str().unwrap(), "--n", "4096"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(d.path(), "young");
    assert_eq!(r.params["n"], "4096");
    assert_eq!(r.params["integrand"], "cubic");
    assert_eq!(metric(&r, "exact"), 0.6);
    let o = roughreg(&["besov", "--config", cfg.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["reconstruct", "--germ", "young", "--germ-csv", "true", "--plot", "true", "--n", "64", "--seed", "5"];
    assert_eq!(roughreg(&args, a.path()).status.code(), Some(0));
    assert_eq!(roughreg(&args, b.path()).status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    let germ = fs::read_to_string(a.path().join("reconstruct-germ.csv")).unwrap();
    assert!(germ.starts_with("x_index,y_index,value\n"));
    assert_eq!(germ.lines().count(), 64 * 64 + 1);
    assert!(fs::read_to_string(a.path().join("reconstruct.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn report_root_and_csv_layouts() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(roughreg(&["besov", "--d", "2", "--n", "16"], d.path()).status.code(), Some(0));
    let text = fs::read_to_string(d.path().join("besov.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["metrics", "params", "pass", "scenario", "schema", "seed"]);
    assert_eq!(v["schema"], report_schema_version());
    assert_eq!(report_schema_version(), "1");
    assert!(!v["params"].as_object().unwrap().contains_key("out"));
    let spec = fs::read_to_string(d.path().join("besov-spectrum.csv")).unwrap();
    assert!(spec.starts_with("kx,ky,re,im\n"));
    assert_eq!(spec.lines().count(), 257);
    let field = fs::read_to_string(d.path().join("besov-field.csv")).unwrap();
    assert!(field.starts_with("index,value\n"));
}

#[test]
fn replay_detects_schema_and_value_changes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(roughreg(&["schauder", "--n", "256"], d.path()).status.code(), Some(0));
    let path = d.path().join("schauder.json");
    let o = bare(&["replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(&path).unwrap();
    let tampered = d.path().join("tampered.json");
    fs::write(&tampered, text.replace("\"schema\": \"1\"", "\"schema\": \"0\"")).unwrap();
    let o = bare(&["replay", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));

    let mut r = Report::from_json(&text).unwrap();
    r.metrics.insert("slope".into(), serde_json::json!(-1.0));
    fs::write(&tampered, r.to_json()).unwrap();
    let o = bare(&["replay", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn preparation_map_files_round_trip() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("p.txt"), "o I[o] -> -1/3, 1\n").unwrap();
    let a = d.path().join("a");
    let o = roughreg(&["model-build", "--prep", "p.txt", "--out", a.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dumped = fs::read_to_string(a.join("model-build-prep.txt")).unwrap();
    assert!(dumped.contains("o I[o] -> -1/3, 1\n"));
    assert!(dumped.contains("o I[o] I[o] -> -2/3, I[o]\n"));
    let b = d.path().join("b");
    let again = a.join("model-build-prep.txt");
    let o = roughreg(&["model-build", "--prep", again.to_str().unwrap(), "--out", b.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(a.join("model-build-model.json")).unwrap(),
        fs::read(b.join("model-build-model.json")).unwrap()
    );
    let o = roughreg(&["model-verify", "--prep", "p.txt"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    // a constant on a tree whose correction must also carry induced terms
    fs::write(d.path().join("bad.txt"), "o I[o I[o]] -> 1, 1\n").unwrap();
    assert_eq!(roughreg(&["model-build", "--prep", "bad.txt"], d.path()).status.code(), Some(2));
}

#[test]
fn list_and_help() {
    let o = bare(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for s in roughreg::SCENARIOS {
        assert!(text.contains(&format!("{} - ", s.name)));
    }
    let o = bare(&["bphz", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("--oracle-factor"));
}
