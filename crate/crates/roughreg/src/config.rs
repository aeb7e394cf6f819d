//! Flat `key = value` scenario configs.
//!
//! A config names one scenario and a set of parameters. Values come from an
//! optional file and from `--key value` flags, flags winning. Keys are
//! normalised to lower case with `-` separators, so `oracle_factor` and
//! `oracle-factor` are the same key. Unknown keys are rejected once the
//! scenario is known.

use std::collections::BTreeMap;

use crate::error::CliError;

/// One documented parameter with its default.
#[derive(Clone, Copy, Debug)]
pub struct ParamSpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

/// Keys every scenario accepts.
pub const COMMON: &[ParamSpec] = &[
    ParamSpec { key: "seed", default: "0", doc: "base RNG seed" },
    ParamSpec { key: "out", default: "out", doc: "output directory" },
    ParamSpec { key: "plot", default: "false", doc: "also write a static SVG plot" },
];

/// Keys that only steer output and are left out of the report.
pub const OUTPUT_KEYS: &[&str] = &["out", "plot"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub values: BTreeMap<String, String>,
}

pub fn normalise_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('_', "-")
}

impl ScenarioConfig {
    pub fn new(scenario: &str) -> Self {
        ScenarioConfig { scenario: scenario.to_string(), values: BTreeMap::new() }
    }

    /// Parses a config file. `#` starts a comment; `scenario = name` may
    /// appear once; any key given twice is an error.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = ScenarioConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = normalise_key(k);
            let v = v.trim().to_string();
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            if k == "scenario" {
                if !c.scenario.is_empty() {
                    return Err(CliError::Config(format!("line {}: scenario given twice", no + 1)));
                }
                c.scenario = v;
            } else if c.values.insert(k.clone(), v).is_some() {
                return Err(CliError::Config(format!("line {}: key {k} given twice", no + 1)));
            }
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(normalise_key(key), value.trim().to_string());
    }

    /// Applies `--key value` / `--key=value` pairs on top of the file values.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected --key value, got {a:?}")))?;
            match body.split_once('=') {
                Some((k, v)) => self.set(k, v),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("flag --{body} needs a value")))?;
                    self.set(body, v);
                }
            }
        }
        Ok(())
    }

    /// Fills defaults and rejects keys the scenario does not know.
    pub fn resolve(&self, specs: &[ParamSpec]) -> Result<Params, CliError> {
        let all = || COMMON.iter().chain(specs);
        for k in self.values.keys() {
            if !all().any(|s| s.key == k) {
                let known: Vec<&str> = all().map(|s| s.key).collect();
                return Err(CliError::Config(format!(
                    "unknown key {k:?} for scenario {}; known keys: {}",
                    self.scenario,
                    known.join(", ")
                )));
            }
        }
        let mut map = BTreeMap::new();
        for s in all() {
            let v = self.values.get(s.key).cloned().unwrap_or_else(|| s.default.to_string());
            map.insert(s.key.to_string(), v);
        }
        Ok(Params { map })
    }
}

/// Resolved parameters with typed accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    map: BTreeMap<String, String>,
}

fn bad(key: &str, v: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = {v:?}: expected {what}"))
}

impl Params {
    pub fn raw(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).unwrap_or_else(|| panic!("parameter {key} not declared"))
    }

    pub fn str(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v = self.raw(key);
        v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(key, v, "a finite number"))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        let v = self.raw(key);
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        let v = self.raw(key);
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(bad(key, v, "true or false")),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let v = self.raw(key);
        let xs: Option<Vec<f64>> =
            v.split(',').map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect();
        xs.filter(|x| !x.is_empty()).ok_or_else(|| bad(key, v, "a comma-separated list of numbers"))
    }

    /// One of a fixed set of words.
    pub fn choice(&self, key: &str, options: &[&str]) -> Result<String, CliError> {
        let v = self.raw(key);
        if options.contains(&v) {
            Ok(v.to_string())
        } else {
            Err(bad(key, v, &format!("one of {}", options.join(", "))))
        }
    }

    /// Parameters that describe the computation, i.e. all but the output keys.
    pub fn reported(&self) -> BTreeMap<String, String> {
        self.map.iter().filter(|(k, _)| !OUTPUT_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPECS: &[ParamSpec] = &[ParamSpec { key: "n", default: "64", doc: "" }];

    #[test]
    fn flags_override_file() {
        let mut c = ScenarioConfig::parse("scenario = besov\n# comment\nn = 32  # trailing\nseed=4\n").unwrap();
        assert_eq!(c.scenario, "besov");
        c.apply_flags(&["--n".into(), "128".into(), "--seed=9".into()]).unwrap();
        let p = c.resolve(SPECS).unwrap();
        assert_eq!(p.usize("n").unwrap(), 128);
        assert_eq!(p.u64("seed").unwrap(), 9);
        assert_eq!(p.str("out"), "out");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioConfig::parse("n 32").is_err());
        assert!(ScenarioConfig::parse("n = 1\nn = 2").is_err());
        let mut c = ScenarioConfig::new("besov");
        c.set("bogus", "1");
        assert!(c.resolve(SPECS).is_err());
        assert!(c.apply_flags(&["n".into()]).is_err());
        assert!(c.apply_flags(&["--n".into()]).is_err());
        let mut c = ScenarioConfig::new("besov");
        c.set("n", "abc");
        assert!(c.resolve(SPECS).unwrap().usize("n").is_err());
    }
}
