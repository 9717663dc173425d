//! Run configuration: a TOML file with one table per stage, plus
//! `--set table.key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use hsc_core::synth::ScenarioConfig;
use hsc_core::PipelineConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` in order and rejects unknown keys.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table.clone())
            .try_into()
            .map_err(|e| anyhow!("invalid configuration: {e}"))?;
        let known = Value::try_from(&cfg).context("serializing configuration")?;
        check_known(&Value::Table(table), &known, "")?;
        cfg.scenario.validate()?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {spec:?} has an empty key");
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut t = table;
    for k in parents {
        let entry = t.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {spec:?}: {k} is not a table"))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, bare string otherwise.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn check_known(given: &Value, known: &Value, prefix: &str) -> Result<()> {
    if let (Value::Table(g), Value::Table(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(kv) => check_known(v, kv, &path)?,
                // optional fields serialize as absent when unset
                None if is_optional(&path) => {}
                None => bail!("unknown configuration key {path}"),
            }
        }
    }
    Ok(())
}

fn is_optional(path: &str) -> bool {
    path == "pipeline.train.hidden_dim"
}
