//! Line-delimited JSON training metrics.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Learner updates so far.
    pub step: u64,
    /// Episodes completed so far.
    pub episode: u64,
    pub mean_terminal_reward: f64,
    pub mean_kl: f64,
    pub alpha_h: f64,
    /// `None` before the first update of the logging window.
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub buffer_size: u64,
    /// Zero in synchronous mode so logs are reproducible byte for byte.
    pub wallclock_s: f64,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Append-only writer; each record is flushed as it is written.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", rec.to_line())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse("metrics log", i + 1, e.to_string())))
        .collect()
}
