//! Analytic performance model: time-per-epoch calibration, throughput,
//! weak-scaling efficiency, and time-to-accuracy projections.
//!
//! Calibration tables map `(workers, local_batch)` to measured seconds per
//! epoch. Two tables ship as CSV assets, transcribed from published
//! Stampede2 (KNL) and MareNostrum 4 (Skylake) measurements; the same code
//! consumes tables built from this crate's own run metrics, so desk-scale
//! benchmarks and published-number reproduction share one path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RunMetrics;

/// Published calibration tables bundled with the crate.
pub const STAMPEDE2_CSV: &str = include_str!("../assets/stampede2.csv");
pub const MARENOSTRUM4_CSV: &str = include_str!("../assets/marenostrum4.csv");

/// Training-image count of the reference dataset (ILSVRC2012 train split).
pub const DEFAULT_DATASET_SIZE: u64 = 1_281_167;

/// One calibrated configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerfRow {
    pub workers: u32,
    pub local_batch: u32,
    pub seconds_per_epoch: f64,
    /// Reported average throughput (images/s), when the source table has it.
    pub throughput: Option<f64>,
}

/// Calibrated `(workers, local_batch) → seconds/epoch` map.
#[derive(Debug, Clone)]
pub struct PerfTable {
    rows: Vec<PerfRow>,
    dataset_size: u64,
}

/// Accuracy-target → training-epochs map. The defaults are the published
/// anchors: 75.5% at 48 epochs, 76% at 64, 76.5% at 78.
#[derive(Debug, Clone)]
pub struct AccuracyEpochMap {
    entries: Vec<(f64, u32)>,
}

impl Default for AccuracyEpochMap {
    fn default() -> Self {
        AccuracyEpochMap {
            entries: vec![(75.5, 48), (76.0, 64), (76.5, 78)],
        }
    }
}

impl AccuracyEpochMap {
    /// Entries must be strictly increasing in both target and epochs.
    pub fn new(entries: Vec<(f64, u32)>) -> Result<AccuracyEpochMap> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("accuracy map must be non-empty".into()));
        }
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].1 <= pair[0].1 {
                return Err(Error::InvalidArgument(
                    "accuracy map must be monotone: higher targets need more epochs".into(),
                ));
            }
        }
        Ok(AccuracyEpochMap { entries })
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn epochs_for(&self, target: f64) -> Result<u32> {
        self.entries
            .iter()
            .find(|(t, _)| (t - target).abs() < 1e-9)
            .map(|(_, e)| *e)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no epoch anchor for target {target}; known targets: {:?}",
                    self.entries.iter().map(|e| e.0).collect::<Vec<_>>()
                ))
            })
    }
}

impl PerfTable {
    pub fn new(rows: Vec<PerfRow>, dataset_size: u64) -> Result<PerfTable> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("perf table must be non-empty".into()));
        }
        for row in &rows {
            if !(row.seconds_per_epoch > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "seconds_per_epoch must be positive (workers={}, local_batch={})",
                    row.workers, row.local_batch
                )));
            }
            if let Some(tp) = row.throughput {
                // Reported throughput must be consistent with the epoch time.
                let implied = tp * row.seconds_per_epoch;
                let rel = (implied - dataset_size as f64).abs() / dataset_size as f64;
                if rel > 0.01 {
                    return Err(Error::InvalidArgument(format!(
                        "throughput {tp} inconsistent with {}s/epoch (off by {:.2}%)",
                        row.seconds_per_epoch,
                        rel * 100.0
                    )));
                }
            }
        }
        Ok(PerfTable { rows, dataset_size })
    }

    pub fn rows(&self) -> &[PerfRow] {
        &self.rows
    }

    pub fn dataset_size(&self) -> u64 {
        self.dataset_size
    }

    /// Parse a calibration table from CSV with columns
    /// `workers,local_batch,seconds_per_epoch,throughput` (throughput may
    /// be empty).
    pub fn from_csv(text: &str, dataset_size: u64) -> Result<PerfTable> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for record in reader.deserialize::<CsvRow>() {
            let r = record.map_err(|e| Error::Format(format!("perf csv: {e}")))?;
            rows.push(PerfRow {
                workers: r.workers,
                local_batch: r.local_batch,
                seconds_per_epoch: r.seconds_per_epoch,
                throughput: r.throughput,
            });
        }
        PerfTable::new(rows, dataset_size)
    }

    pub fn from_csv_path(path: &Path, dataset_size: u64) -> Result<PerfTable> {
        let text = std::fs::read_to_string(path)?;
        PerfTable::from_csv(&text, dataset_size)
    }

    /// The bundled published tables, by name.
    pub fn builtin(name: &str) -> Result<PerfTable> {
        match name {
            "stampede2" => PerfTable::from_csv(STAMPEDE2_CSV, DEFAULT_DATASET_SIZE),
            "marenostrum4" => PerfTable::from_csv(MARENOSTRUM4_CSV, DEFAULT_DATASET_SIZE),
            other => Err(Error::InvalidArgument(format!(
                "unknown builtin table '{other}' (have: stampede2, marenostrum4)"
            ))),
        }
    }

    /// Build a desk-scale calibration row set from recorded run metrics.
    pub fn from_runs(
        runs: &[(u32, u32, &RunMetrics)],
        dataset_size: u64,
    ) -> Result<PerfTable> {
        let mut rows = Vec::new();
        for (workers, local_batch, metrics) in runs {
            let secs = metrics.mean_epoch_seconds().ok_or_else(|| {
                Error::InvalidArgument("run has no completed epochs".into())
            })?;
            rows.push(PerfRow {
                workers: *workers,
                local_batch: *local_batch,
                seconds_per_epoch: secs,
                throughput: None,
            });
        }
        PerfTable::new(rows, dataset_size)
    }

    fn known(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("({}, {})", r.workers, r.local_batch))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn lookup(&self, workers: u32, local_batch: u32) -> Result<&PerfRow> {
        self.rows
            .iter()
            .find(|r| r.workers == workers && r.local_batch == local_batch)
            .ok_or_else(|| Error::UnknownPerfRow {
                workers,
                local_batch,
                known: self.known(),
            })
    }

    /// Images per second implied by a row's epoch time.
    pub fn derived_throughput(&self, row: &PerfRow) -> f64 {
        self.dataset_size as f64 / row.seconds_per_epoch
    }

    /// Weak-scaling efficiency when growing `base_workers → scaled_workers`
    /// at a fixed local batch: `(t_base/t_scaled)/(scaled/base)`.
    pub fn scaling_efficiency(
        &self,
        base_workers: u32,
        scaled_workers: u32,
        local_batch: u32,
    ) -> Result<f64> {
        let base = self.lookup(base_workers, local_batch)?;
        let scaled = self.lookup(scaled_workers, local_batch)?;
        let speedup = base.seconds_per_epoch / scaled.seconds_per_epoch;
        Ok(speedup / (scaled_workers as f64 / base_workers as f64))
    }

    /// Speedup of every row at `local_batch` relative to the reference
    /// worker count (reference row has speedup 1).
    pub fn speedup_curve(
        &self,
        local_batch: u32,
        reference_workers: u32,
    ) -> Result<Vec<(u32, f64)>> {
        let reference = self.lookup(reference_workers, local_batch)?;
        let mut points: Vec<(u32, f64)> = self
            .rows
            .iter()
            .filter(|r| r.local_batch == local_batch)
            .map(|r| (r.workers, reference.seconds_per_epoch / r.seconds_per_epoch))
            .collect();
        points.sort_by_key(|p| p.0);
        Ok(points)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    workers: u32,
    local_batch: u32,
    seconds_per_epoch: f64,
    throughput: Option<f64>,
}

/// Projected minutes to reach `target` top-1 accuracy on a calibrated
/// configuration: `epochs(target) · seconds_per_epoch / 60`, rounded
/// half-up to whole minutes.
pub fn project_ttt(
    table: &PerfTable,
    workers: u32,
    local_batch: u32,
    target: f64,
    map: &AccuracyEpochMap,
) -> Result<u64> {
    let row = table.lookup(workers, local_batch)?;
    let epochs = map.epochs_for(target)?;
    let minutes = epochs as f64 * row.seconds_per_epoch / 60.0;
    Ok(minutes.round() as u64)
}
