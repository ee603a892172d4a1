//! Flat `key = value` experiment configuration.
//!
//! The format is plain UTF-8 lines: `key = value`, `#` comments, blank
//! lines ignored. Repeated `sweep.<param> = v1,v2,...` lines declare sweep
//! blocks over any known key. Unknown keys are rejected and every run
//! record embeds the fully-resolved config, which is itself a valid config
//! file that reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{CliError, CliResult};

/// Every accepted key with its default; `None` marks "empty by default"
/// keys that commands may require.
const KNOWN_KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("42")),
    ("out", Some("runs/out")),
    ("data.source", Some("synthetic")),
    ("data.classes", Some("10")),
    ("data.per_class", Some("1200")),
    ("data.test_per_class", Some("200")),
    ("data.input_dim", Some("784")),
    ("data.separation", Some("3.0")),
    ("data.idx_images", None),
    ("data.idx_labels", None),
    ("data.idx_test_images", None),
    ("data.idx_test_labels", None),
    ("imbalance.class", Some("8")),
    ("imbalance.keep", None),
    ("model", Some("mlp")),
    ("model.hidden", Some("128")),
    ("dp.mode", Some("baseline")),
    ("dp.clip", None),
    ("dp.noise_multiplier", None),
    ("dp.sigma", None),
    ("dp.delta", Some("1e-6")),
    ("dp.accounting_n", None),
    ("train.batch", Some("128")),
    ("train.epochs", Some("30")),
    ("train.lr", Some("0.05")),
    ("train.optimizer", Some("sgd")),
    ("eval.grouping", Some("label")),
    ("fed.participants", Some("10")),
    ("fed.per_round", Some("5")),
    ("fed.rounds", Some("20")),
    ("fed.local_epochs", Some("1")),
    ("fed.local_lr", Some("0.05")),
    ("fed.local_batch", Some("16")),
    ("fed.clip", None),
    ("fed.noise_multiplier", None),
    ("fed.sigma", None),
    ("fed.global_lr", Some("1.0")),
    ("fed.shard", Some("iid")),
    ("fed.group_classes", Some("8")),
    ("fed.group_holders", Some("1")),
];

/// A parsed and fully-resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
    sweeps: Vec<(String, Vec<String>)>,
}

impl ExperimentConfig {
    /// Parse config text, apply `--set` overrides, fill defaults, reject
    /// unknown keys.
    pub fn resolve(text: &str, overrides: &[String]) -> CliResult<ExperimentConfig> {
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        let mut sweeps: Vec<(String, Vec<String>)> = Vec::new();

        let mut feed = |key: &str, value: &str, source: &str| -> CliResult<()> {
            if let Some(param) = key.strip_prefix("sweep.") {
                if !KNOWN_KEYS.iter().any(|(k, _)| *k == param) {
                    return Err(CliError::config(format!(
                        "unknown sweep parameter '{param}' ({source})"
                    )));
                }
                let vals: Vec<String> = value
                    .split(',')
                    .map(|v| v.trim().to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                if vals.is_empty() {
                    return Err(CliError::config(format!(
                        "sweep.{param} has an empty value list ({source})"
                    )));
                }
                sweeps.push((param.to_string(), vals));
                return Ok(());
            }
            if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::config(format!("unknown key '{key}' ({source})")));
            }
            values.insert(key.to_string(), value.to_string());
            Ok(())
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            feed(key.trim(), value.trim(), &format!("line {}", lineno + 1))?;
        }
        for pair in overrides {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                CliError::config(format!("--set '{pair}': expected key=value"))
            })?;
            feed(key.trim(), value.trim(), "--set")?;
        }
        for (key, default) in KNOWN_KEYS {
            if !values.contains_key(*key) {
                values.insert(key.to_string(), default.unwrap_or("").to_string());
            }
        }
        Ok(ExperimentConfig { values, sweeps })
    }

    /// Canonical text form: sorted keys, then sweep blocks. Feeding this
    /// back through [`ExperimentConfig::resolve`] reproduces the config.
    pub fn to_resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").unwrap();
        }
        for (param, vals) in &self.sweeps {
            writeln!(out, "sweep.{param} = {}", vals.join(",")).unwrap();
        }
        out
    }

    pub fn sweeps(&self) -> &[(String, Vec<String>)] {
        &self.sweeps
    }

    /// Copy with one key replaced and sweep blocks dropped (used to expand
    /// sweep runs).
    pub fn with_value(&self, key: &str, value: &str) -> CliResult<ExperimentConfig> {
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::config(format!("unknown key '{key}'")));
        }
        let mut values = self.values.clone();
        values.insert(key.to_string(), value.to_string());
        Ok(ExperimentConfig { values, sweeps: Vec::new() })
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_default()
    }

    /// Value of a key; empty counts as unset.
    pub fn get_opt(&self, key: &str) -> Option<&str> {
        let v = self.raw(key);
        (!v.is_empty()).then_some(v)
    }

    pub fn get_str(&self, key: &str) -> CliResult<&str> {
        self.get_opt(key)
            .ok_or_else(|| CliError::config(format!("'{key}' is required but empty")))
    }

    pub fn get_usize(&self, key: &str) -> CliResult<usize> {
        self.get_str(key)?
            .parse()
            .map_err(|_| CliError::config(format!("'{key}' = '{}' is not an integer", self.raw(key))))
    }

    pub fn get_u64(&self, key: &str) -> CliResult<u64> {
        self.get_str(key)?
            .parse()
            .map_err(|_| CliError::config(format!("'{key}' = '{}' is not an integer", self.raw(key))))
    }

    pub fn get_f64(&self, key: &str) -> CliResult<f64> {
        self.get_str(key)?
            .parse()
            .map_err(|_| CliError::config(format!("'{key}' = '{}' is not a number", self.raw(key))))
    }

    pub fn get_opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.get_opt(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                CliError::config(format!("'{key}' = '{v}' is not a number"))
            }),
        }
    }

    pub fn get_opt_usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.get_opt(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                CliError::config(format!("'{key}' = '{v}' is not an integer"))
            }),
        }
    }

    /// Comma-separated list of integers.
    pub fn get_usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        self.get_str(key)?
            .split(',')
            .map(|v| {
                v.trim().parse().map_err(|_| {
                    CliError::config(format!("'{key}' contains non-integer '{v}'"))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::resolve("", &[]).unwrap();
        assert_eq!(cfg.get_str("dp.mode").unwrap(), "baseline");
        assert_eq!(cfg.get_usize("train.batch").unwrap(), 128);
        assert!(cfg.get_opt("imbalance.keep").is_none());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ExperimentConfig::resolve("# hi\n\n seed = 7 \n", &[]).unwrap();
        assert_eq!(cfg.get_u64("seed").unwrap(), 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::resolve("nope = 1\n", &[]).is_err());
        assert!(ExperimentConfig::resolve("", &["nope=1".into()]).is_err());
        assert!(ExperimentConfig::resolve("sweep.nope = 1,2\n", &[]).is_err());
    }

    #[test]
    fn overrides_win() {
        let cfg = ExperimentConfig::resolve("seed = 1\n", &["seed=9".into()]).unwrap();
        assert_eq!(cfg.get_u64("seed").unwrap(), 9);
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = ExperimentConfig::resolve(
            "seed = 3\nsweep.train.batch = 32, 64\n",
            &["dp.mode=clip_only".into()],
        )
        .unwrap();
        let text = cfg.to_resolved_text();
        let back = ExperimentConfig::resolve(&text, &[]).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.sweeps().len(), 1);
        assert_eq!(back.sweeps()[0].1, vec!["32", "64"]);
    }

    #[test]
    fn empty_sweep_list_rejected() {
        assert!(ExperimentConfig::resolve("sweep.train.batch = \n", &[]).is_err());
    }
}
