use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fiscal-ipw");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FISCAL_IPW_CONFIG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn default_estimate_prints_three_columns() {
    let o = run(&["estimate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    for v in ["WLS (A2)", "OLS (A2)", "WLS (A1)"] {
        assert!(header.contains(v));
    }
    let n_line = text.lines().find(|l| l.starts_with("Number of observations")).unwrap();
    assert_eq!(n_line.matches("109").count(), 3);
    assert!(stderr(&o).contains("Propensity diagnostics"));
}

#[test]
fn json_output_follows_schema() {
    let o = run(&["estimate", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        for key in ["betas", "std_errors", "p_values", "stars"] {
            assert_eq!(r[key].as_array().unwrap().len(), 4, "{key}");
        }
        assert_eq!(r["n"], 109);
        assert!(r["r_squared"].is_f64());
        assert!(r["variant"].is_string());
        assert!(r["std_errors"].as_array().unwrap().iter().all(|s| s.as_f64().unwrap() > 0.0));
    }
}

#[test]
fn missing_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.txt");
    let o = run(&["estimate", "--data", "/no/such/file.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("E_DATA_NOT_FOUND: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn failed_run_keeps_previous_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.txt");
    std::fs::write(&out, "previous").unwrap();
    let o = run(&["estimate", "--e-min", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("E_BAD_CONFIG: "));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "previous");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["estimate", "--variant", "probit"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("E_USAGE: "));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["text", "csv", "json"] {
        let a = dir.path().join(format!("a.{format}"));
        let b = dir.path().join(format!("b.{format}"));
        for path in [&a, &b] {
            let o = run(&["estimate", "--format", format, "--out", path.to_str().unwrap()]);
            assert!(o.status.success());
            assert!(o.stdout.is_empty());
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{format}");
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a.json", "b.json"].iter().map(|f| dir.path().join(f)).collect();
    for p in &paths {
        let o = run(&["simulate", "--seed", "9", "--n", "400", "--replications", "50", "--format", "json", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&paths[0]).unwrap()).unwrap();
    assert_eq!(report["spec"]["seed"], 9);
    assert_eq!(report["replications"], 50);

    let o = run(&["simulate", "--replications", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("E_BAD_SPEC: "));
}

#[test]
fn default_simulation_shows_overstatement() {
    let o = run(&["simulate", "--format", "json"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let shares = report["a1_bias_exceeds_a2"].as_array().unwrap();
    assert!(shares[0].as_f64().unwrap() >= 0.95);
    assert!(shares[3].as_f64().unwrap() >= 0.95);
}

fn write_renamed_data(dir: &Path) -> std::path::PathBuf {
    let csv = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/us_macro_1992_2019_synthetic.csv")).unwrap();
    let renamed = csv.replacen("date,rgdp,gov_spend", "quarter,gdp,spending", 1);
    let path = dir.join("renamed.csv");
    std::fs::write(&path, renamed).unwrap();
    path
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_renamed_data(dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[data]\npath = {:?}\ndate_col = \"quarter\"\noutput_col = \"gdp\"\npolicy_col = \"spending\"\n\
             covariates = [\"diff(log(gdp))\", \"diff(log(commodity))\", \"diff(unemp)\"]\n\
             forecaster_inputs = [\"log(gdp)\", \"ted\", \"log(commodity)\", \"log(unemp)\"]\n\
             [estimate]\nvariants = [\"WLS_A2\"]\n[output]\nformat = \"csv\"\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let with_env = Command::new(BIN).arg("estimate").env("FISCAL_IPW_CONFIG", &config).output().unwrap();
    assert!(with_env.status.success(), "{}", stderr(&with_env));
    let text = stdout(&with_env);
    assert!(text.starts_with("term,wls_a2_beta,"));

    // same numbers as the default run on the original column names
    let default = stdout(&run(&["estimate", "--variant", "wls-a2", "--format", "csv"]));
    assert_eq!(text, default);

    // the command line wins over the file
    let json = Command::new(BIN)
        .args(["estimate", "--format", "json"])
        .env("FISCAL_IPW_CONFIG", &config)
        .output()
        .unwrap();
    assert!(serde_json::from_slice::<serde_json::Value>(&json.stdout).is_ok());
}

#[test]
fn show_config_round_trips_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let shown = run(&["show-config", "--config", "/dev/null"]);
    assert!(shown.status.success(), "{}", stderr(&shown));
    let path = dir.path().join("shown.toml");
    std::fs::write(&path, &shown.stdout).unwrap();
    let again = run(&["show-config", "--config", path.to_str().unwrap()]);
    assert_eq!(shown.stdout, again.stdout);
}

#[test]
fn missing_config_file() {
    let o = run(&["estimate", "--config", "/no/such/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("E_CONFIG_NOT_FOUND: "));
}

#[test]
fn inspect_data_summarizes_the_table() {
    let o = run(&["inspect-data", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"], 112);
    assert_eq!(v["first"], "1992Q1");
    assert_eq!(v["last"], "2019Q4");
    assert_eq!(v["panel_rows"], 109);
    let counts: u64 = v["class_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 109);
}
