use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const SNAPSHOT: &str = "config.snapshot";
pub const LOG: &str = "data/logged.vtd";
pub const ORACLE: &str = "data/oracle.json";
pub const GANSD: &str = "checkpoints/gansd.ck";
pub const MAIL: &str = "checkpoints/mail.ck";
pub const BC: &str = "checkpoints/bc.ck";

/// `<out>/<run-id>/{config.snapshot, data/, checkpoints/, reports/}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        for sub in ["data", "checkpoints", "reports"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        }
        Ok(RunDir { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn report(&self, name: &str) -> String {
        format!("reports/{name}")
    }

    /// Path of an upstream artifact, or the error naming its producer.
    pub fn input(&self, rel: &str, producer: &'static str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingInput { path: p, producer })
        }
    }

    /// Reserve a fresh output path; existing artifacts are never replaced.
    pub fn output(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            return Err(CliError::OutputExists(p));
        }
        Ok(p)
    }

    /// Write a new file through a temporary sibling so readers never see
    /// a partial artifact.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.output(rel)?;
        write_atomic(&p, bytes)?;
        Ok(p)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Default run id: UTC timestamp plus seed, suffixed when taken.
pub fn fresh_run_id(out: &Path, seed: u64) -> String {
    let base = format!("{}-seed{seed}", chrono::Utc::now().format("%Y%m%dT%H%M%S"));
    let mut id = base.clone();
    let mut k = 2;
    while out.join(&id).exists() {
        id = format!("{base}-{k}");
        k += 1;
    }
    id
}
