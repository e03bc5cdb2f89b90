use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Session;
use crate::error::{Error, Result};

pub const DATA_HEADER: &str = "VTLAB-DATA v1";

/// Provenance of a logged dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub logging_policy: String,
    pub time_slice: Option<u32>,
    pub drift_level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sessions: Vec<Session>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "dataset",
        detail: detail.into(),
    }
}

impl Dataset {
    pub fn num_records(&self) -> usize {
        self.sessions.iter().map(|s| s.steps.len()).sum()
    }

    /// Header line, one metadata line, then one JSON object per session.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("<dataset stream>", e);
        writeln!(w, "{DATA_HEADER}").map_err(io)?;
        serde_json::to_writer(&mut *w, &self.meta)?;
        writeln!(w).map_err(io)?;
        for s in &self.sessions {
            serde_json::to_writer(&mut *w, s)?;
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || lines.next().transpose().map_err(|e| Error::io("<dataset stream>", e));
        match next()? {
            Some(h) if h.trim_end() == DATA_HEADER => {}
            other => return Err(bad(format!("expected header `{DATA_HEADER}`, found {other:?}"))),
        }
        let meta: DatasetMeta = serde_json::from_str(&next()?.ok_or_else(|| bad("missing metadata line"))?)
            .map_err(|e| bad(format!("metadata: {e}")))?;
        let mut sessions = Vec::new();
        while let Some(line) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let s: Session =
                serde_json::from_str(&line).map_err(|e| bad(format!("session {}: {e}", sessions.len())))?;
            sessions.push(s);
        }
        Ok(Dataset { meta, sessions })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }

    /// Check every session, returning the first violation.
    pub fn validate(&self, max_index: u32) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(Error::invalid("dataset has no sessions"));
        }
        self.sessions.iter().try_for_each(|s| s.validate(max_index))
    }
}
