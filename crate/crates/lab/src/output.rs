//! Output files: atomic writes, JSON documents, JSON-lines progress logs and
//! the flat result CSV.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use transboost_core::eval::RunReport;
use transboost_core::trainer::{EpochRecord, Progress};

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Serialize)]
struct LogLine<'a> {
    stage: &'a str,
    #[serde(flatten)]
    record: &'a EpochRecord,
    wall_time_secs: f64,
}

/// Appends one JSON object per epoch to a log file.
pub struct JsonLinesLog {
    out: BufWriter<File>,
    stage: String,
    start: Instant,
    error: Option<std::io::Error>,
}

impl JsonLinesLog {
    pub fn create(path: &Path, stage: &str) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = File::create(path).with_context(|| format!("creating log {}", path.display()))?;
        Ok(JsonLinesLog { out: BufWriter::new(file), stage: stage.to_owned(), start: Instant::now(), error: None })
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e).context("writing progress log");
        }
        self.out.flush().context("flushing progress log")
    }
}

impl Progress for JsonLinesLog {
    fn epoch(&mut self, record: &EpochRecord) {
        log::debug!("{} epoch {}: ce {:.6} transductive {:.6}", self.stage, record.epoch, record.ce, record.transductive);
        if self.error.is_some() {
            return;
        }
        let line = LogLine { stage: &self.stage, record, wall_time_secs: self.start.elapsed().as_secs_f64() };
        let res = serde_json::to_writer(&mut self.out, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

/// One row of the flat result table.
#[derive(Debug, Serialize)]
struct ResultRow {
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
    inductive_top1: f64,
    transductive_top1: f64,
    improvement: f64,
    loss_rel_improvement: Option<f64>,
}

/// Renders runs as CSV with one row per run.
pub fn results_csv<'a>(runs: impl IntoIterator<Item = &'a RunReport>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in runs {
        w.serialize(ResultRow {
            train_fraction: r.train_fraction,
            test_fraction: r.test_fraction,
            seed: r.seed,
            inductive_top1: r.inductive_top1,
            transductive_top1: r.transductive_top1,
            improvement: r.improvement,
            loss_rel_improvement: r.loss_rel_improvement,
        })?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
