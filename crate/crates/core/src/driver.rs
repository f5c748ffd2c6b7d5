//! Experiment orchestration: builds a run from a config, executes it and
//! writes its artifacts; runs parameter sweeps.
//!
//! A run writes four files named after `{type_label}_{seed}`:
//!
//! * `.csv`: one row per drone per global epoch;
//! * `.json`: the run summary plus its termination status;
//! * `_fleet.json`: the fleet before and after the run;
//! * `_energy.csv`: every compute and transmit debit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_toml, ConfigError, DataSource, ExperimentConfig, Validate};
use crate::energy::{CommMeter, ComputePowerConfig, EnergyError};
use crate::fleet::{kmeans_cluster, select_cluster_heads, spawn_fleet, DroneSnapshot, FleetError};
use crate::learning::{
    load_csv_dataset, partition_dataset, split_holdout, DatasetPartition, Example, LearningError, ModelLayout,
    ModelParams, SyntheticBlobs,
};
use crate::metrics::{read_records_csv, summarize, CsvSink, MetricsError, RunSummary};
use crate::seed::derive_seed;
use crate::strategies::{RunStatus, SimError, Simulation};

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid sweep grid: {0}")]
    Grid(String),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub records_csv: PathBuf,
    pub summary_json: PathBuf,
    pub fleet_json: PathBuf,
    pub energy_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub epochs_completed: usize,
    /// `None` when the run stopped before its first epoch finished.
    pub summary: Option<RunSummary>,
    pub files: RunFiles,
}

impl RunOutcome {
    /// Process exit code for this outcome: 0 completed, 2 stopped on
    /// battery, 3 diverged.
    pub fn exit_code(&self) -> i32 {
        status_exit_code(&self.status)
    }
}

pub fn status_exit_code(status: &RunStatus) -> i32 {
    match status {
        RunStatus::Completed => 0,
        RunStatus::BatteryExhausted { .. } => 2,
        RunStatus::Diverged { .. } => 3,
    }
}

/// Contents of the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub run_id: String,
    pub seed: u64,
    pub epochs_completed: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    #[serde(flatten)]
    pub summary: Option<RunSummary>,
}

#[derive(Serialize)]
struct FleetFile<'a> {
    initial: &'a [DroneSnapshot],
    #[serde(rename = "final")]
    end: &'a [DroneSnapshot],
}

fn load_examples(cfg: &ExperimentConfig) -> Result<Vec<Example>, DriverError> {
    match &cfg.data.source {
        DataSource::Synthetic { features, classes, separation, noise, samples } => {
            let blobs = SyntheticBlobs { features: *features, classes: *classes, separation: *separation, noise: *noise };
            let needed = cfg.fleet.n * cfg.data.per_drone;
            let total = samples.unwrap_or_else(|| (needed as f64 / (1.0 - cfg.data.eval_fraction)).ceil() as usize);
            Ok(blobs.generate(total, derive_seed(cfg.fleet.seed, "blobs", 0))?)
        }
        DataSource::Csv { path } => Ok(load_csv_dataset(path)?),
    }
}

fn infer_layout(cfg: &ExperimentConfig, examples: &[Example]) -> Result<ModelLayout, DriverError> {
    let inputs = examples[0].features.len();
    let max_label = examples.iter().map(|e| e.label).max().unwrap_or(0);
    let layout = cfg.model.layout.unwrap_or(ModelLayout::Softmax { inputs, classes: (max_label + 1).max(2) });
    let bad = |key: &str, message: String| ConfigError::Invalid { key: key.into(), message };
    if layout.inputs() != inputs {
        return Err(bad("model.layout.inputs", format!("model takes {} inputs, data has {inputs}", layout.inputs())).into());
    }
    if layout.classes().is_some_and(|c| max_label >= c) {
        return Err(bad("model.layout.classes", format!("data has label {max_label}, outside the model's classes")).into());
    }
    layout.validate()?;
    Ok(layout)
}

/// Spawns, clusters and provisions the fleet described by `cfg`.
pub fn build_simulation(cfg: &ExperimentConfig) -> Result<Simulation, DriverError> {
    cfg.validate()?;
    let seed = cfg.fleet.seed;
    let plan = cfg.seeded_plan();
    let capacity = cfg.capacity_wh();

    let mut fleet = spawn_fleet(cfg.fleet.n, cfg.fleet.area, cfg.fleet.altitude, capacity, seed)?;
    let clustering = kmeans_cluster(&fleet, plan.clusters(), KMEANS_MAX_ITERS, seed)?;
    fleet.apply_clustering(&clustering);
    select_cluster_heads(&mut fleet);

    let examples = load_examples(cfg)?;
    let layout = infer_layout(cfg, &examples)?;
    let (pool, eval) = split_holdout(examples, cfg.data.eval_fraction, seed)?;
    let partitions = partition_dataset(&pool, cfg.fleet.n, cfg.data.per_drone, cfg.data.overlap, seed)?;
    let eval = DatasetPartition::new(eval)?;

    let init = ModelParams::init(layout, derive_seed(seed, "init", 0)).with_bytes_per_value(cfg.model.bytes_per_value)?;
    let message_bytes = cfg.model.model_bytes_override.unwrap_or(init.encoded_len() as u64);
    let compute = ComputePowerConfig { battery_capacity_wh: capacity, ..cfg.compute };
    let meter = CommMeter::new(cfg.channel, compute, message_bytes, cfg.fleet.n);
    Ok(Simulation::new(fleet, partitions, eval, init, plan, meter)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DriverError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DriverError::Io { path: path.into(), source: e.into() })?;
    text.push('\n');
    fs::write(path, text).map_err(io_error(path))
}

/// Runs one experiment and writes its artifacts under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, DriverError> {
    let sim = build_simulation(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let stem = format!("{}_{}", sim.run_id(), cfg.fleet.seed);
    let files = RunFiles {
        records_csv: dir.join(format!("{stem}.csv")),
        summary_json: dir.join(format!("{stem}.json")),
        fleet_json: dir.join(format!("{stem}_fleet.json")),
        energy_csv: dir.join(format!("{stem}_energy.csv")),
    };
    log::info!("{}: {} drones, {} epochs, seed {}", sim.run_id(), cfg.fleet.n, cfg.plan.ge, cfg.fleet.seed);

    let initial = sim.fleet().snapshot();
    let file = File::create(&files.records_csv).map_err(io_error(&files.records_csv))?;
    let mut sink = CsvSink::new(BufWriter::new(file));
    let result = sim.run(&mut sink)?;
    sink.into_inner()?.flush().map_err(io_error(&files.records_csv))?;

    let summary = match summarize(&result.records) {
        Ok(s) => Some(s),
        Err(MetricsError::Empty) => None,
        Err(e) => return Err(e.into()),
    };
    let report = SummaryFile {
        run_id: result.run_id.clone(),
        seed: cfg.fleet.seed,
        epochs_completed: result.epochs_completed,
        status: result.status,
        summary: summary.clone(),
    };
    write_json(&files.summary_json, &report)?;
    write_json(&files.fleet_json, &FleetFile { initial: &initial, end: &result.fleet.snapshot() })?;
    let ledger = File::create(&files.energy_csv).map_err(io_error(&files.energy_csv))?;
    result.ledger.write_csv(BufWriter::new(ledger))?;

    Ok(RunOutcome {
        run_id: result.run_id,
        seed: cfg.fleet.seed,
        status: result.status,
        epochs_completed: result.epochs_completed,
        summary,
        files,
    })
}

/// Summarizes a round-record CSV written by [`run_experiment`].
pub fn summarize_csv(path: &Path) -> Result<RunSummary, DriverError> {
    let file = File::open(path).map_err(io_error(path))?;
    Ok(summarize(&read_records_csv(file)?)?)
}

/// Parameter grid for [`run_sweep`].
///
/// `axes` maps config keys to value lists and expands to their Cartesian
/// product; keys may be nested tables (`[axes.plan] lr = [5, 10]`) or quoted
/// dotted paths (`"plan.lr" = [5, 10]`). Each entry of `cases` is a partial
/// config merged over the base. The sweep runs every case against every
/// axis combination; with no cases, the base config is the single case.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub axes: toml::Table,
    pub cases: Vec<toml::Table>,
}

impl Validate for SweepGrid {
    fn validate(&self) -> Result<(), ConfigError> {
        let axes = flatten_axes(&self.axes).map_err(|message| ConfigError::Invalid { key: "axes".into(), message })?;
        if axes.is_empty() && self.cases.is_empty() {
            return Err(ConfigError::Invalid { key: "axes".into(), message: "grid has no axes and no cases".into() });
        }
        Ok(())
    }
}

impl SweepGrid {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        parse_toml(text, "<grid>")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        parse_toml(&text, &path.display().to_string())
    }

    /// One overlay table per run, with a canonical `key=value` description.
    fn expand(&self) -> Result<Vec<(toml::Table, String)>, DriverError> {
        let axes = flatten_axes(&self.axes).map_err(DriverError::Grid)?;
        let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (key, values) in &axes {
            combos = combos
                .into_iter()
                .flat_map(|combo| {
                    values.iter().map(move |v| {
                        let mut next = combo.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        let cases = if self.cases.is_empty() { vec![toml::Table::new()] } else { self.cases.clone() };
        let mut runs = Vec::new();
        for case in &cases {
            for combo in &combos {
                let mut overlay = case.clone();
                let mut settings = flatten_values(case);
                for (key, value) in combo {
                    set_path(&mut overlay, key, value.clone()).map_err(DriverError::Grid)?;
                    settings.insert(key.clone(), value.to_string());
                }
                let description =
                    settings.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",");
                runs.push((overlay, description));
            }
        }
        Ok(runs)
    }
}

/// Dotted key -> value list. Arrays are axes, tables nest.
fn flatten_axes(table: &toml::Table) -> Result<BTreeMap<String, Vec<toml::Value>>, String> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Vec<toml::Value>>) -> Result<(), String> {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&key, t, out)?,
                toml::Value::Array(a) if a.is_empty() => return Err(format!("axis `{key}` has no values")),
                toml::Value::Array(a) => {
                    out.insert(key, a.clone());
                }
                other => return Err(format!("axis `{key}` must be a list of values, got {other}")),
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out)?;
    Ok(out)
}

fn flatten_values(table: &toml::Table) -> BTreeMap<String, String> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                other => {
                    out.insert(key, other.to_string());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = dotted.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| format!("`{dotted}`: `{part}` is not a table"))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub type_label: String,
    pub le: usize,
    pub seed: u64,
    /// Canonical `key=value` list of the settings applied over the base.
    pub overrides: String,
    pub output_dir: PathBuf,
    /// `None` when the run failed with an error.
    pub status: Option<RunStatus>,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// 0 when every run completed, otherwise 1 for any error, else the
    /// first non-zero run code.
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().any(|r| r.error.is_some()) {
            return 1;
        }
        self.rows.iter().filter_map(|r| r.status.as_ref()).map(status_exit_code).find(|&c| c != 0).unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        let sink_error = |e: csv::Error| MetricsError::Sink(e.to_string());
        w.write_record([
            "type_label",
            "le",
            "seed",
            "overrides",
            "status",
            "final_accuracy",
            "final_loss",
            "avg_battery_pct",
            "avg_send_gb",
            "avg_receive_gb",
            "avg_sr_gb",
            "error",
        ])
        .map_err(sink_error)?;
        for row in &self.rows {
            let status = match row.status {
                Some(RunStatus::Completed) => "completed",
                Some(RunStatus::BatteryExhausted { .. }) => "battery_exhausted",
                Some(RunStatus::Diverged { .. }) => "diverged",
                None => "failed",
            };
            let numbers = match &row.summary {
                Some(s) => [s.final_accuracy, s.final_loss, s.avg_battery_pct, s.avg_send_gb, s.avg_receive_gb, s.avg_sr_gb]
                    .map(|v| v.to_string()),
                None => Default::default(),
            };
            let mut record = vec![row.type_label.clone(), row.le.to_string(), row.seed.to_string(), row.overrides.clone()];
            record.push(status.into());
            record.extend(numbers);
            record.push(row.error.clone().unwrap_or_default());
            w.write_record(&record).map_err(sink_error)?;
        }
        w.flush().map_err(|e| MetricsError::Sink(e.to_string()))
    }
}

/// Runs every grid point sequentially. Each run writes to its own
/// subdirectory of `base.output_dir`; the combined table is sorted by
/// (type label, le, seed, overrides) and written there as
/// `sweep_summary.csv` and `sweep_summary.json`. A failing run becomes an
/// error row and the sweep moves on.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepReport, DriverError> {
    let base_table = toml::Table::try_from(base).map_err(|e| ConfigError::Serialize(e.to_string()))?;
    let mut planned = Vec::new();
    for (overlay, overrides) in grid.expand()? {
        let mut table = base_table.clone();
        merge(&mut table, &overlay);
        let text = toml::to_string(&table).map_err(|e| ConfigError::Serialize(e.to_string()))?;
        let cfg = ExperimentConfig::from_toml_str(&text);
        let (label, le, seed) = match &cfg {
            Ok(c) => (c.plan.type_label(c.fleet.n), c.plan.le, c.fleet.seed),
            Err(_) => ("invalid".to_string(), 0, 0),
        };
        planned.push((label, le, seed, overrides, cfg));
    }
    planned.sort_by(|a, b| (&a.0, a.1, a.2, &a.3).cmp(&(&b.0, b.1, b.2, &b.3)));

    let mut rows = Vec::with_capacity(planned.len());
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    for (type_label, le, seed, overrides, cfg) in planned {
        let name = format!("{type_label}_{le}le_{seed}");
        let count = used.entry(name.clone()).or_insert(0);
        *count += 1;
        let dir_name = if *count == 1 { name } else { format!("{name}_{count}") };
        let output_dir = base.output_dir.join(dir_name);
        let mut row = SweepRow {
            type_label,
            le,
            seed,
            overrides,
            output_dir: output_dir.clone(),
            status: None,
            summary: None,
            error: None,
        };
        let result = cfg.map_err(DriverError::from).and_then(|mut cfg| {
            cfg.output_dir = output_dir;
            run_experiment(&cfg)
        });
        match result {
            Ok(outcome) => {
                row.status = Some(outcome.status);
                row.summary = outcome.summary;
            }
            Err(e) => {
                log::error!("sweep run {} [{}] failed: {e}", row.type_label, row.overrides);
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }

    let report = SweepReport { rows };
    let dir = &base.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let csv_path = dir.join("sweep_summary.csv");
    let file = File::create(&csv_path).map_err(io_error(&csv_path))?;
    report.write_csv(BufWriter::new(file))?;
    write_json(&dir.join("sweep_summary.json"), &report)?;
    Ok(report)
}
