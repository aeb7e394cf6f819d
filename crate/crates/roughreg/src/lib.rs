//! Scenario runner over `roughreg-core`: flat configs, JSON reports, CSV data
//! and optional static SVG plots.
//!
//! ```no_run
//! use roughreg::{run, ScenarioConfig};
//! let mut c = ScenarioConfig::new("young");
//! c.set("n", "1024");
//! let out = run(&c).unwrap();
//! assert!(out.report.pass);
//! ```

pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod scenarios;

pub use config::{Params, ScenarioConfig};
pub use error::CliError;
pub use report::{report_schema_version, Report};
pub use scenarios::{find, run, Outcome, SCENARIOS};

/// Config for `scenario` from command-line words: an optional
/// `--config FILE` supplies base values, every other `--key value` overrides.
pub fn config_from_args(scenario: &str, args: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut file = None;
    let mut rest = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            file = Some(it.next().ok_or_else(|| CliError::Config("--config needs a path".into()))?.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            file = Some(p.to_string());
        } else {
            rest.push(a.clone());
        }
    }
    let mut c = match file {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            ScenarioConfig::parse(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if !c.scenario.is_empty() && c.scenario != scenario {
        return Err(CliError::Config(format!("config file is for scenario {}, not {scenario}", c.scenario)));
    }
    c.scenario = scenario.to_string();
    c.apply_flags(&rest)?;
    Ok(c)
}

/// Re-runs the scenario recorded in a report and demands an identical report.
pub fn replay(report_json: &str) -> Result<Report, CliError> {
    let old = Report::from_json(report_json)?;
    let mut c = ScenarioConfig::new(&old.scenario);
    for (k, v) in &old.params {
        c.set(k, v);
    }
    c.set("seed", &old.seed.to_string());
    let new = run(&c)?.report;
    if new.to_json() != old.to_json() {
        let differing: std::collections::BTreeSet<&String> = new
            .metrics
            .keys()
            .chain(old.metrics.keys())
            .filter(|k| new.metrics.get(*k) != old.metrics.get(*k))
            .collect();
        return Err(CliError::Numerical(format!("replay of {} differs from the report; metrics {differing:?}", old.scenario)));
    }
    Ok(new)
}
