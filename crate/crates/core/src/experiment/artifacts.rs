//! Append-only artifact files. A file may be written again only with
//! identical bytes, so no command can silently change an earlier result.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::checkpoint::Checkpoint;
use crate::engine::LossBreakdown;
use crate::error::{Error, Result};

pub const BASE_DIR: &str = "base";
pub const RUN_DIR: &str = "run";
pub const ABLATE_DIR: &str = "ablate";
pub const UNIVERSE_FILE: &str = "universe.toml";
pub const EXPERIMENT_FILE: &str = "experiment.toml";
pub const EVAL_FILE: &str = "eval.toml";
pub const BASE_REPORT_FILE: &str = "base_report.json";
pub const PRETRAIN_LOSS_FILE: &str = "pretrain_loss.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const REPORT_FILE: &str = "report.csv";
/// Wall-clock log; the only file that is appended to rather than written once.
pub const TIMING_LOG: &str = "timing.log";

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint-{step:03}.toml"))
}

pub fn step_loss_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("loss-step-{step:03}.csv"))
}

/// Writes `bytes` to `path`, creating parent directories. An existing file
/// with the same bytes is left alone; one with different bytes is an error.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        let old = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if old == bytes {
            return Ok(());
        }
        return Err(Error::Usage(format!(
            "refusing to overwrite {} with different contents; use a fresh output directory",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn append_line(path: &Path, line: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn write_checkpoint(dir: &Path, c: &Checkpoint) -> Result<()> {
    write_artifact(&checkpoint_path(dir, c.step), c.to_toml().as_bytes())
}

/// Contiguous checkpoints `0..=j` present in `dir`.
pub fn read_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    loop {
        let p = checkpoint_path(dir, out.len());
        if !p.exists() {
            break;
        }
        out.push(Checkpoint::load(&p)?);
    }
    Ok(out)
}

pub(crate) fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub const STEP_LOSS_HEADER: [&str; 5] = ["iteration", "unlearn", "retain", "reg", "total"];
pub const LOSS_HEADER: [&str; 6] = ["step", "iteration", "unlearn", "retain", "reg", "total"];

pub fn step_loss_csv(losses: &[LossBreakdown]) -> Vec<u8> {
    csv_bytes(
        &STEP_LOSS_HEADER,
        losses.iter().enumerate().map(|(i, b)| {
            vec![i.to_string(), b.unlearn.to_string(), b.retain.to_string(), b.reg.to_string(), b.total.to_string()]
        }),
    )
}

/// Parses a per-step loss file back into its rows.
pub fn read_step_loss(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| Error::parse(path, e)))
        .collect()
}
