use std::path::Path;

use serde::{Deserialize, Serialize};
use vtlab_bench::BenchConfig;
use vtlab_core::baselines::{BcConfig, SlConfig};
use vtlab_core::gansd::GansdConfig;
use vtlab_core::mail::MailConfig;
use vtlab_core::market::MarketDims;
use vtlab_core::policy::{AncConfig, TrpoConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Logged sessions produced by `gen-data`.
    pub sessions: usize,
    /// Drift applied to the calibrated marketplace before logging.
    pub drift_level: f64,
    pub dims: MarketDims,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            sessions: 200_000,
            drift_level: 0.0,
            dims: MarketDims::default(),
        }
    }
}

/// Everything a run depends on, under namespaced tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
    /// Output root; `VTLAB_OUT` and `--out` override it.
    pub out: String,
    pub oracle: OracleSection,
    pub gansd: GansdConfig,
    pub mail: MailConfig,
    pub trpo: TrpoConfig,
    pub anc: AncConfig,
    pub bc: BcConfig,
    pub sl: SlConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 1,
            out: "runs".into(),
            oracle: OracleSection::default(),
            gansd: GansdConfig::default(),
            mail: MailConfig::default(),
            trpo: TrpoConfig::default(),
            anc: AncConfig::default(),
            bc: BcConfig::default(),
            sl: SlConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Dotted paths in `given` that have no counterpart in `known`.
fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => unknown_keys(g, kn, &path, out),
            _ => {}
        }
    }
}

impl RunConfig {
    /// Parse TOML text over the defaults, reporting every unknown key at once.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let given: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
        let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut bad = Vec::new();
        unknown_keys(&given, &known, "", &mut bad);
        if !bad.is_empty() {
            return Err(CliError::Config(bad.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
        }
        toml::from_str(text).map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every section and report all problems together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        let mut check = |r: vtlab_core::Result<()>| {
            if let Err(e) = r {
                errors.push(e.to_string());
            }
        };
        check(self.gansd.validate());
        check(self.mail.validate());
        check(self.trpo.validate());
        check(self.bench.validate());
        if self.mail.warm_start && self.mail.net.hidden != self.bc.net.hidden {
            errors.push("mail.warm_start needs mail.net and bc.net to have the same hidden layers".into());
        }
        if self.threads == 0 {
            errors.push("threads must be at least 1".into());
        }
        if self.oracle.sessions == 0 {
            errors.push("oracle.sessions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.oracle.drift_level) {
            errors.push("oracle.drift_level must lie in [0, 1]".into());
        }
        if self.seed > i64::MAX as u64 {
            errors.push("seed must fit in a signed 64-bit integer".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors))
        }
    }

    /// Hash of the settings that determine results; threads and output
    /// location are excluded.
    pub fn science_hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 1;
        c.out = String::new();
        vtlab_bench::config_hash(&c).expect("config serializes")
    }
}
