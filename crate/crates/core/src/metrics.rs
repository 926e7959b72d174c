//! Run instrumentation: per-iteration and per-epoch records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EvalMetrics;

/// One training iteration as seen by a worker. Byte counters cover the
/// gradient allreduce (the model exchange); the scalar metrics exchange is
/// not included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRow {
    pub iter: u64,
    pub epoch: u32,
    pub lr: f64,
    pub weight_decay: f64,
    /// Mean loss over the global minibatch.
    pub loss: f64,
    pub wall_ms: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Per-epoch summary with held-out evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub wall_seconds: f64,
    pub val_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
}

/// Everything a run records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iterations: Vec<IterRow>,
    pub epochs: Vec<EpochRow>,
    /// Epochs where a snapshot capture was requested but failed; the run
    /// continues past these.
    pub capture_failures: Vec<u32>,
}

impl RunMetrics {
    pub fn record_epoch(&mut self, epoch: u32, wall_seconds: f64, val: EvalMetrics) {
        self.epochs.push(EpochRow {
            epoch,
            wall_seconds,
            val_loss: val.loss,
            val_top1: val.top1,
            val_top5: val.top5,
        });
    }

    /// Mean wall seconds per epoch, if any epoch completed.
    pub fn mean_epoch_seconds(&self) -> Option<f64> {
        if self.epochs.is_empty() {
            return None;
        }
        Some(self.epochs.iter().map(|e| e.wall_seconds).sum::<f64>() / self.epochs.len() as f64)
    }
}

/// Streams metrics to disk as a run progresses: iteration rows as
/// JSON-lines, epoch summaries as CSV. Both files are flushed at every
/// epoch boundary, so an interrupted run keeps all completed epochs.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<MetricsWriter> {
        std::fs::create_dir_all(dir)?;
        let jsonl = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        let mut csv = BufWriter::new(File::create(dir.join("epochs.csv"))?);
        writeln!(csv, "epoch,wall_seconds,val_loss,val_top1,val_top5")?;
        Ok(MetricsWriter { jsonl, csv })
    }

    /// Append one completed epoch: its iteration rows and its summary.
    pub fn append_epoch(&mut self, iterations: &[IterRow], epoch: &EpochRow) -> Result<()> {
        for row in iterations {
            let line = serde_json::to_string(row)
                .map_err(|e| Error::Format(format!("metrics row: {e}")))?;
            writeln!(self.jsonl, "{line}")?;
        }
        writeln!(
            self.csv,
            "{},{},{},{},{}",
            epoch.epoch, epoch.wall_seconds, epoch.val_loss, epoch.val_top1, epoch.val_top5
        )?;
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}
