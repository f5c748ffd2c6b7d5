//! Per-round logbook and end-of-run summaries.
//!
//! The logbook is a CSV file with one row per drone per global epoch. The
//! summary averages the final epoch's accuracy and loss over the fleet and
//! the per-drone traffic totals over drones; GB means 10^9 bytes.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("cannot summarize an empty record set")]
    Empty,
    #[error("records mix run ids {0:?} and {1:?}")]
    MixedRuns(String, String),
    #[error("logbook write failed: {0}")]
    Sink(String),
    #[error("logbook read failed: {0}")]
    Read(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Intra,
    Exchange,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub run_id: String,
    /// 1-based.
    pub global_epoch: usize,
    pub drone_id: usize,
    pub cluster_id: usize,
    pub phase: Phase,
    pub accuracy: f64,
    pub loss: f64,
    /// Fraction of capacity remaining, 0 when depleted.
    pub battery_pct: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub bytes_total: u64,
}

impl RoundRecord {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.bytes_total != self.bytes_sent + self.bytes_received {
            return Err(MetricsError::InvalidRecord(format!(
                "bytes_total {} != {} + {}",
                self.bytes_total, self.bytes_sent, self.bytes_received
            )));
        }
        if !(0.0..=1.0).contains(&self.battery_pct) {
            return Err(MetricsError::InvalidRecord(format!("battery_pct {} outside [0, 1]", self.battery_pct)));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(MetricsError::InvalidRecord(format!("accuracy {} outside [0, 1]", self.accuracy)));
        }
        Ok(())
    }
}

/// Destination for round records, written in arrival order.
pub trait RecordSink {
    fn write(&mut self, record: &RoundRecord) -> Result<(), MetricsError>;
    fn flush(&mut self) -> Result<(), MetricsError>;
}

/// Validates `record` and appends it to `sink`.
pub fn record_round(sink: &mut dyn RecordSink, record: &RoundRecord) -> Result<(), MetricsError> {
    record.validate()?;
    sink.write(record)
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<RoundRecord>,
}

impl RecordSink for MemorySink {
    fn write(&mut self, record: &RoundRecord) -> Result<(), MetricsError> {
        self.records.push(record.clone());
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        Ok(())
    }
}

pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        Self { writer: csv::Writer::from_writer(out) }
    }

    pub fn into_inner(self) -> Result<W, MetricsError> {
        self.writer.into_inner().map_err(|e| MetricsError::Sink(e.to_string()))
    }
}

impl<W: Write> RecordSink for CsvSink<W> {
    fn write(&mut self, record: &RoundRecord) -> Result<(), MetricsError> {
        self.writer.serialize(record).map_err(|e| MetricsError::Sink(e.to_string()))
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        self.writer.flush().map_err(|e| MetricsError::Sink(e.to_string()))
    }
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RoundRecord>, MetricsError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| MetricsError::Read(e.to_string())))
        .collect()
}

/// End-of-run figures for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub type_label: String,
    /// Percent.
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Percent of capacity remaining at the end of the run.
    pub avg_battery_pct: f64,
    pub avg_send_gb: f64,
    pub avg_receive_gb: f64,
    pub avg_sr_gb: f64,
}

const GB: f64 = 1e9;

pub fn summarize(records: &[RoundRecord]) -> Result<RunSummary, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = records.iter().find(|r| r.run_id != first.run_id) {
        return Err(MetricsError::MixedRuns(first.run_id.clone(), other.run_id.clone()));
    }
    // Fixed summation order keeps the result independent of record order.
    let mut sorted: Vec<&RoundRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.global_epoch, r.drone_id, r.phase));

    let last_epoch = sorted.last().map(|r| r.global_epoch).expect("non-empty");
    let last: Vec<&&RoundRecord> = sorted.iter().filter(|r| r.global_epoch == last_epoch).collect();
    let mean = |f: &dyn Fn(&RoundRecord) -> f64| last.iter().map(|r| f(r)).sum::<f64>() / last.len() as f64;

    let drones = sorted.iter().map(|r| r.drone_id).collect::<BTreeSet<_>>().len() as f64;
    let sent: u64 = sorted.iter().map(|r| r.bytes_sent).sum();
    let received: u64 = sorted.iter().map(|r| r.bytes_received).sum();

    Ok(RunSummary {
        type_label: first.run_id.clone(),
        final_accuracy: 100.0 * mean(&|r| r.accuracy),
        final_loss: mean(&|r| r.loss),
        avg_battery_pct: 100.0 * mean(&|r| r.battery_pct),
        avg_send_gb: sent as f64 / drones / GB,
        avg_receive_gb: received as f64 / drones / GB,
        avg_sr_gb: (sent + received) as f64 / drones / GB,
    })
}
