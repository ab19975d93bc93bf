//! Files written to a run's output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::activation::ActPath;
use crate::error::{Error, Result};
use crate::trainer::MetricsRecord;

pub const ASSIGNMENT_FILE: &str = "assignment.json";
pub const ENERGY_REPORT_FILE: &str = "energy_report.csv";
pub const DEVICE_MC_FILE: &str = "device_mc.json";

pub fn model_file(phase: &str) -> String {
    format!("{phase}_model.json")
}

pub fn metrics_file(command: &str) -> String {
    format!("{command}.metrics.jsonl")
}

pub fn summary_file(command: &str) -> String {
    format!("{command}.summary.json")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: format!("serializing {}", path.display()),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: format!("parsing {}", path.display()),
        source: e,
    })
}

/// Per-layer channel paths, serialized as `[["analog", "digital", ...], ...]`.
pub fn write_assignment(path: &Path, assignment: &[Vec<ActPath>]) -> Result<()> {
    write_json(path, assignment)
}

pub fn read_assignment(path: &Path) -> Result<Vec<Vec<ActPath>>> {
    read_json(path)
}

/// JSON-lines metrics log. Write errors are held until [`MetricsLog::finish`]
/// so the log can serve as an infallible training callback.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            error: None,
            records: Vec::new(),
        })
    }

    pub fn record(&mut self, r: &MetricsRecord) {
        self.records.push(r.clone());
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("metrics records serialize");
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(e);
        }
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn finish(mut self) -> Result<Vec<MetricsRecord>> {
        if let Some(e) = self.error.take() {
            return Err(Error::io(format!("writing {}", self.path.display()), e));
        }
        self.out
            .flush()
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))?;
        Ok(self.records)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                context: format!("parsing {}", path.display()),
                source: e,
            })
        })
        .collect()
}
