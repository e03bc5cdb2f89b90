use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vtlab_core::{Error, Result};

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Summary { mean, std: var.sqrt(), n }
    }
}

/// One acceptance check evaluated on an experiment's numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Persisted result of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// SHA-256 of the configuration that produced the numbers.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub results: serde_json::Value,
    pub aggregate: BTreeMap<String, Summary>,
    pub checks: Vec<Check>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Hex SHA-256 of any serializable configuration, over its JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Reports that share one configuration hash, keyed by experiment id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub config_hash: String,
    pub reports: BTreeMap<String, ExperimentReport>,
}

impl ReportSet {
    /// Refuses reports produced under different configurations.
    pub fn collect(reports: Vec<ExperimentReport>) -> Result<Self> {
        let Some(first) = reports.first() else {
            return Err(Error::invalid("no reports to aggregate"));
        };
        let hash = first.config_hash.clone();
        let mut out = BTreeMap::new();
        for r in reports {
            if r.config_hash != hash {
                return Err(Error::invalid(format!(
                    "report {} has config hash {} but {} was expected",
                    r.experiment, r.config_hash, hash
                )));
            }
            out.insert(r.experiment.clone(), r);
        }
        Ok(ReportSet {
            config_hash: hash,
            reports: out,
        })
    }

    pub fn checks(&self) -> impl Iterator<Item = (&str, &Check)> {
        self.reports
            .iter()
            .flat_map(|(k, r)| r.checks.iter().map(move |c| (k.as_str(), c)))
    }
}

/// Pearson correlation; `None` when either series is constant or too short.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Relative gap `|v − r| / r`.
pub fn relative_gap(virtual_value: f64, real: f64) -> f64 {
    (virtual_value - real).abs() / real
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn summary_of_values() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
    }

    #[test]
    fn mismatched_hashes_are_refused() {
        let r = |e: &str, h: &str| ExperimentReport {
            experiment: e.into(),
            config_hash: h.into(),
            seeds: vec![1],
            results: serde_json::Value::Null,
            aggregate: BTreeMap::new(),
            checks: vec![],
        };
        assert!(ReportSet::collect(vec![r("a", "x"), r("b", "x")]).is_ok());
        let err = ReportSet::collect(vec![r("a", "x"), r("b", "y")]).unwrap_err();
        assert!(err.to_string().contains("config hash"));
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(config_hash(&[1, 2]).unwrap(), config_hash(&[1, 2]).unwrap());
        assert_ne!(config_hash(&[1, 2]).unwrap(), config_hash(&[2, 1]).unwrap());
        assert_eq!(config_hash(&()).unwrap().len(), 64);
    }
}
