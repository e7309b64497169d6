//! Run configuration: a sectioned TOML file, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::AggregateMode;
use crate::data::SplitFractions;
use crate::error::{Error, Result};
use crate::rl::AgentConfig;
use crate::sru::TrainConfig;

pub const OUTPUT_DIR_ENV: &str = "COLDCHAIN_OUTPUT_DIR";
pub const SEED_ENV: &str = "COLDCHAIN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub vaccinations: PathBuf,
    pub population: PathBuf,
    pub state_meta: PathBuf,
    /// States to use, in order; empty means every state in the vaccination file.
    pub states: Vec<String>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vaccinations: "vaccinations.csv".into(),
            population: "population.csv".into(),
            state_meta: "state_meta.csv".into(),
            states: Vec::new(),
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

impl DataConfig {
    pub fn split(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            validation: self.val_fraction,
            test: 1.0 - self.train_fraction - self.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub seed: u64,
    pub aggregate_mode: AggregateMode,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            seed: 42,
            aggregate_mode: AggregateMode::Product,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub predictor: TrainConfig,
    pub costs: CostConfig,
    pub agent: AgentConfig,
    pub output: OutputConfig,
}

const SECTIONS: [&str; 5] = ["data", "predictor", "costs", "agent", "output"];

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Reads `path`, resolves relative paths against its directory and applies
    /// environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML text; unknown sections or keys are reported by dotted name.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("<file>", e.message().to_string()))?;
        let defaults = toml::Table::try_from(RunConfig::default())
            .map_err(|e| config_error("<defaults>", e.to_string()))?;
        for (section, value) in &table {
            if !SECTIONS.contains(&section.as_str()) {
                return Err(config_error(section.clone(), "unknown section"));
            }
            let Some(entries) = value.as_table() else {
                return Err(config_error(section.clone(), "expected a [section] table"));
            };
            let known = defaults.get(section).and_then(|v| v.as_table());
            for (key, v) in entries {
                let field = format!("{section}.{key}");
                // keys whose default is empty are not in the serialized defaults
                let expected = known.and_then(|k| k.get(key));
                let is_known = expected.is_some() || (section == "data" && key == "states");
                if !is_known {
                    return Err(config_error(field, "unknown key"));
                }
                if let Some(exp) = expected {
                    let compatible = exp.type_str() == v.type_str()
                        || (exp.type_str() == "float" && v.type_str() == "integer");
                    if !compatible {
                        return Err(config_error(
                            field,
                            format!("expected {}, found {}", exp.type_str(), v.type_str()),
                        ));
                    }
                }
            }
        }
        // integers are accepted where floats are expected
        let mut table = table;
        for (section, value) in table.iter_mut() {
            let known = defaults.get(section).and_then(|v| v.as_table());
            if let (Some(entries), Some(known)) = (value.as_table_mut(), known) {
                for (key, v) in entries.iter_mut() {
                    if let (Some(exp), Some(i)) = (known.get(key), v.as_integer()) {
                        if exp.is_float() {
                            *v = toml::Value::Float(i as f64);
                        }
                    }
                }
            }
        }
        RunConfig::deserialize(table).map_err(|e| config_error("<file>", e.message().to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.vaccinations,
            &mut self.data.population,
            &mut self.data.state_meta,
            &mut self.output.dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Output directory and seed overrides from the environment.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = get(OUTPUT_DIR_ENV) {
            self.output.dir = dir.into();
        }
        if let Some(raw) = get(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| config_error(SEED_ENV, format!("not an unsigned integer: `{raw}`")))?;
            self.predictor.seed = seed;
            self.costs.seed = seed;
            self.agent.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let fraction_ok = |v: f64| (0.0..=1.0).contains(&v);
        if !fraction_ok(d.train_fraction) || d.train_fraction == 0.0 {
            return Err(config_error("data.train_fraction", format!("must lie in (0, 1], got {}", d.train_fraction)));
        }
        if !fraction_ok(d.val_fraction) || d.train_fraction + d.val_fraction > 1.0 + 1e-12 {
            return Err(config_error(
                "data.val_fraction",
                format!("must lie in [0, 1 − train_fraction], got {}", d.val_fraction),
            ));
        }
        let p = &self.predictor;
        if !(p.lr > 0.0) || !p.lr.is_finite() {
            return Err(config_error("predictor.lr", format!("must be positive, got {}", p.lr)));
        }
        if p.epochs == 0 {
            return Err(config_error("predictor.epochs", "must be positive"));
        }
        self.agent.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_with_integer_floats() {
        let cfg = RunConfig::parse(
            "[agent]\ngamma = 1\nepisodes = 20\n[data]\nstates = [\"Ohio\"]\n[costs]\naggregate_mode = \"weighted_sum\"\n",
        )
        .unwrap();
        assert_eq!(cfg.agent.gamma, 1.0);
        assert_eq!(cfg.agent.episodes, 20);
        assert_eq!(cfg.data.states, vec!["Ohio".to_string()]);
        assert_eq!(cfg.costs.aggregate_mode, AggregateMode::WeightedSum);
    }

    fn field_of(text: &str) -> String {
        match RunConfig::parse(text).and_then(|c| c.validate()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("[agent]\ngama = 0.5\n"), "agent.gama");
        assert_eq!(field_of("[agent]\ngamma = \"high\"\n"), "agent.gamma");
        assert_eq!(field_of("[agent]\ngamma = 1.5\n"), "agent.gamma");
        assert_eq!(field_of("[predictor]\nlr = -1.0\n"), "predictor.lr");
        assert_eq!(field_of("[nonsense]\nx = 1\n"), "nonsense");
        assert_eq!(field_of("[data]\ntrain_fraction = 0.95\nval_fraction = 0.1\n"), "data.val_fraction");
    }

    #[test]
    fn env_overrides_and_relative_paths() {
        let mut cfg = RunConfig::default();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.data.vaccinations, Path::new("/cfg/vaccinations.csv"));
        cfg.apply_env(|k| match k {
            OUTPUT_DIR_ENV => Some("/elsewhere".into()),
            SEED_ENV => Some("9".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.output.dir, Path::new("/elsewhere"));
        assert_eq!((cfg.predictor.seed, cfg.costs.seed, cfg.agent.seed), (9, 9, 9));
        assert!(cfg.apply_env(|k| (k == SEED_ENV).then(|| "x".into())).is_err());
    }
}
