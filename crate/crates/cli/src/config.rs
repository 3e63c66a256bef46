use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use variscan::regression::{Family, GlmSpec, Stage2Config};
use variscan::sim::{ClusterSimSpec, SurvivalSimSpec};
use variscan::stage1::Stage1Config;

use crate::error::{CliError, CliResult};

/// Response family selection; `auto` reads it off the outcome file
/// (a delta column means AFT, otherwise Gaussian).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    #[default]
    Auto,
    Gaussian,
    Aft,
    Poisson,
    Bernoulli,
}

impl FamilyChoice {
    pub fn resolve(self, has_delta: bool) -> Family {
        match self {
            FamilyChoice::Auto if has_delta => Family::Aft,
            FamilyChoice::Auto | FamilyChoice::Gaussian => Family::Gaussian,
            FamilyChoice::Aft => Family::Aft,
            FamilyChoice::Poisson => Family::Glm(GlmSpec::poisson()),
            FamilyChoice::Bernoulli => Family::Glm(GlmSpec::bernoulli()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    /// centre and scale covariate columns on ingestion
    pub standardize: bool,
    /// sweeps between checkpoint writes; 0 writes none
    pub checkpoint_every: usize,
    /// member covariates listed per cluster in the selection report
    pub top_members: usize,
    /// bins of the discount density export
    pub density_bins: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { standardize: true, checkpoint_every: 500, top_members: 5, density_bins: 50 }
    }
}

/// Every tunable of a run, defaults resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub family: FamilyChoice,
    pub io: IoConfig,
    pub cluster_sim: ClusterSimSpec,
    pub survival_sim: SurvivalSimSpec,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

/// What gets written next to the outputs and hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    #[serde(flatten)]
    pub run: RunConfig,
}

impl EffectiveConfig {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    /// sha256 of the TOML text, hex encoded.
    pub fn hash(&self) -> CliResult<String> {
        Ok(hex_digest(self.to_toml()?.as_bytes()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Config file (if any), then `key.path=value` overrides, then `--seed`.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{item}` is not key=value")))?;
        set_path(&mut value, key.trim(), parse_value(raw.trim()))?;
    }
    let mut config: RunConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.stage1.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.stage2.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.cluster_sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.survival_sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let c = load(None, &["stage1.burn_in=7".into(), "io.standardize=false".into()], Some(3)).unwrap();
        assert_eq!(c.stage1.burn_in, 7);
        assert!(!c.io.standardize);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn effective_config_round_trips_through_toml() {
        let e = EffectiveConfig {
            command: "fit".into(),
            inputs: [("covariates".to_string(), "x.csv".to_string())].into(),
            run: RunConfig::default(),
        };
        let text = e.to_toml().unwrap();
        let back: EffectiveConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let err = load(None, &["stage2.variance_fraction=[0.9, 0.5]".into()], None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
