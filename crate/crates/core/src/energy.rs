//! Computation and radio energy, battery bookkeeping and the energy ledger.
//!
//! Conventions:
//!
//! * The reference channel gain is derived from a reference path loss
//!   `L0 = 28 + 20 log10(f_c)` dB at `d0` (f_c in GHz by default), so the
//!   linear gain at `d0` is `10^(-L0/10)`. The frequency unit can be
//!   switched to Hz, or `L0` given directly.
//! * Transmit power and noise density are configured in dBm and dBm/Hz.
//! * Only the sender of a message pays transmit energy; receive energy is
//!   not modelled.
//! * Distances below `d0` are clamped to `d0`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{distance, DroneState, Fleet};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("distance must be positive, got {0} m")]
    InvalidDistance(f64),
    #[error("invalid message size {0} bits")]
    InvalidSize(f64),
    #[error("link infeasible: rate {rate} bit/s at {distance_m} m")]
    LinkInfeasible { rate: f64, distance_m: f64 },
    #[error("invalid channel configuration: {0}")]
    InvalidChannel(String),
    #[error("invalid compute configuration: {0}")]
    InvalidCompute(String),
    #[error("ledger write failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyUnit {
    Ghz,
    Hz,
}

/// Radio parameters for the line-of-sight link model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    /// Reference path loss at `ref_distance_m`, dB. When absent it is
    /// `28 + 20 log10(f_c)` with `f_c` in `ref_loss_frequency_unit`.
    pub ref_path_loss_db: Option<f64>,
    pub ref_loss_frequency_unit: FrequencyUnit,
    pub ref_distance_m: f64,
    pub path_loss_exp: f64,
    pub noise_psd_dbm_hz: f64,
    pub tx_power_dbm: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            carrier_hz: 2e9,
            ref_path_loss_db: None,
            ref_loss_frequency_unit: FrequencyUnit::Ghz,
            ref_distance_m: 1.0,
            path_loss_exp: 2.2,
            noise_psd_dbm_hz: -174.0,
            tx_power_dbm: 10.0,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(EnergyError::InvalidChannel(format!("{name} must be positive, got {v}")))
            }
        };
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("carrier_hz", self.carrier_hz)?;
        positive("ref_distance_m", self.ref_distance_m)?;
        positive("path_loss_exp", self.path_loss_exp)?;
        for (name, v) in [("noise_psd_dbm_hz", self.noise_psd_dbm_hz), ("tx_power_dbm", self.tx_power_dbm)] {
            if !v.is_finite() {
                return Err(EnergyError::InvalidChannel(format!("{name} must be finite")));
            }
        }
        if let Some(l) = self.ref_path_loss_db {
            if !l.is_finite() {
                return Err(EnergyError::InvalidChannel("ref_path_loss_db must be finite".into()));
            }
        }
        Ok(())
    }

    /// Reference path loss at `d0`, dB.
    pub fn reference_loss_db(&self) -> f64 {
        self.ref_path_loss_db.unwrap_or_else(|| {
            let f = match self.ref_loss_frequency_unit {
                FrequencyUnit::Ghz => self.carrier_hz / 1e9,
                FrequencyUnit::Hz => self.carrier_hz,
            };
            28.0 + 20.0 * f.log10()
        })
    }

    /// Linear channel gain at `d0`.
    pub fn reference_gain(&self) -> f64 {
        10f64.powf(-self.reference_loss_db() / 10.0)
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Noise power over the allocated bandwidth, watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz
    }

    pub fn snr(&self, d: f64) -> Result<f64, EnergyError> {
        Ok(channel_gain(d, self)? * self.tx_power_w() / self.noise_power_w())
    }

    /// Shannon rate, bit/s.
    pub fn rate(&self, d: f64) -> Result<f64, EnergyError> {
        Ok(self.bandwidth_hz * (1.0 + self.snr(d)?).log2())
    }
}

/// `g0 (d / d0)^-alpha`, with `d` clamped below at `d0`.
pub fn channel_gain(d: f64, cfg: &ChannelConfig) -> Result<f64, EnergyError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(EnergyError::InvalidDistance(d));
    }
    let d = d.max(cfg.ref_distance_m);
    Ok(cfg.reference_gain() * (d / cfg.ref_distance_m).powf(-cfg.path_loss_exp))
}

/// Minimum time to push `s_bits` over the link at Shannon capacity.
pub fn min_transmit_time(s_bits: f64, d: f64, cfg: &ChannelConfig) -> Result<f64, EnergyError> {
    if !(s_bits >= 0.0 && s_bits.is_finite()) {
        return Err(EnergyError::InvalidSize(s_bits));
    }
    if s_bits == 0.0 {
        return Ok(0.0);
    }
    let rate = cfg.rate(d)?;
    if rate.is_nan() || rate < 1.0 {
        return Err(EnergyError::LinkInfeasible { rate, distance_m: d });
    }
    Ok(s_bits / rate)
}

/// Transmit energy `t * p`, joules.
pub fn comm_energy(t: f64, cfg: &ChannelConfig) -> f64 {
    t * cfg.tx_power_w()
}

/// Power draw of local training and battery size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputePowerConfig {
    /// P_avg, watts.
    pub avg_power_w: f64,
    /// E_d, watt-hours.
    pub battery_capacity_wh: f64,
    /// Training wall time per example per local epoch, seconds.
    pub seconds_per_sample_epoch: f64,
}

impl Default for ComputePowerConfig {
    fn default() -> Self {
        Self { avg_power_w: 50.0, battery_capacity_wh: 274.0, seconds_per_sample_epoch: 1e-3 }
    }
}

impl ComputePowerConfig {
    pub fn validate(&self) -> Result<(), EnergyError> {
        for (name, v) in [("avg_power_w", self.avg_power_w), ("battery_capacity_wh", self.battery_capacity_wh)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnergyError::InvalidCompute(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.seconds_per_sample_epoch >= 0.0 && self.seconds_per_sample_epoch.is_finite()) {
            return Err(EnergyError::InvalidCompute("seconds_per_sample_epoch must be >= 0".into()));
        }
        Ok(())
    }

    /// Training time for `samples` examples over `epochs` epochs.
    pub fn training_time(&self, samples: usize, epochs: usize) -> f64 {
        self.seconds_per_sample_epoch * samples as f64 * epochs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeEnergy {
    pub energy_wh: f64,
    /// Share of E_d consumed.
    pub battery_fraction: f64,
}

/// `E_c = P_avg * t_tr`, in Wh and as a share of battery capacity.
pub fn compute_energy(p: &ComputePowerConfig, t_tr: f64) -> ComputeEnergy {
    let energy_wh = p.avg_power_w * t_tr / 3600.0;
    ComputeEnergy { energy_wh, battery_fraction: energy_wh / p.battery_capacity_wh }
}

/// Removes `joules` from the drone's battery, floored at zero. Returns the
/// energy actually drawn.
pub fn debit_battery(drone: &mut DroneState, joules: f64) -> f64 {
    debug_assert!(joules >= 0.0);
    let available_j = drone.battery_remaining_wh * 3600.0;
    if joules >= available_j {
        drone.battery_remaining_wh = 0.0;
        available_j
    } else {
        drone.battery_remaining_wh -= joules / 3600.0;
        joules
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Compute,
    Transmit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedgerEntry {
    pub drone_id: usize,
    pub kind: EnergyKind,
    pub joules: f64,
    pub seconds: f64,
    pub bytes: u64,
    pub peer: Option<usize>,
    pub round: usize,
}

/// Append-only record of every energy draw.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub entries: Vec<EnergyLedgerEntry>,
}

impl EnergyLedger {
    pub fn push(&mut self, entry: EnergyLedgerEntry) {
        self.entries.push(entry);
    }

    pub fn joules_for(&self, drone: usize) -> f64 {
        self.entries.iter().filter(|e| e.drone_id == drone).map(|e| e.joules).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EnergyError> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e).map_err(|e| EnergyError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| EnergyError::Io(e.to_string()))
    }
}

/// Prices transmissions and training against drone batteries and counts
/// the bytes each drone sends and receives.
#[derive(Debug, Clone)]
pub struct CommMeter {
    pub channel: ChannelConfig,
    pub compute: ComputePowerConfig,
    /// Size of one model message, bytes.
    pub message_bytes: u64,
    pub ledger: EnergyLedger,
    epoch_sent: Vec<u64>,
    epoch_received: Vec<u64>,
    total_sent: Vec<u64>,
    total_received: Vec<u64>,
}

impl CommMeter {
    pub fn new(channel: ChannelConfig, compute: ComputePowerConfig, message_bytes: u64, drones: usize) -> Self {
        Self {
            channel,
            compute,
            message_bytes,
            ledger: EnergyLedger::default(),
            epoch_sent: vec![0; drones],
            epoch_received: vec![0; drones],
            total_sent: vec![0; drones],
            total_received: vec![0; drones],
        }
    }

    /// Sends one model message from `from` to `to`, debiting the sender.
    pub fn transmit(&mut self, fleet: &mut Fleet, from: usize, to: usize, round: usize) -> Result<(), EnergyError> {
        let bytes = self.message_bytes;
        let d = distance(&fleet.drones[from].position, &fleet.drones[to].position).max(self.channel.ref_distance_m);
        let seconds = min_transmit_time(bytes as f64 * 8.0, d, &self.channel)?;
        let joules = debit_battery(&mut fleet.drones[from], comm_energy(seconds, &self.channel));
        self.ledger.push(EnergyLedgerEntry {
            drone_id: from,
            kind: EnergyKind::Transmit,
            joules,
            seconds,
            bytes,
            peer: Some(to),
            round,
        });
        self.epoch_sent[from] += bytes;
        self.epoch_received[to] += bytes;
        self.total_sent[from] += bytes;
        self.total_received[to] += bytes;
        Ok(())
    }

    /// Charges `drone` for training on `samples` examples for `epochs`
    /// epochs.
    pub fn train(&mut self, fleet: &mut Fleet, drone: usize, samples: usize, epochs: usize, round: usize) {
        let seconds = self.compute.training_time(samples, epochs);
        let joules = compute_energy(&self.compute, seconds).energy_wh * 3600.0;
        let joules = debit_battery(&mut fleet.drones[drone], joules);
        self.ledger.push(EnergyLedgerEntry {
            drone_id: drone,
            kind: EnergyKind::Compute,
            joules,
            seconds,
            bytes: 0,
            peer: None,
            round,
        });
    }

    /// Per-drone (sent, received) bytes since the last call.
    pub fn take_epoch_traffic(&mut self) -> Vec<(u64, u64)> {
        let out = self.epoch_sent.iter().copied().zip(self.epoch_received.iter().copied()).collect();
        self.epoch_sent.iter_mut().for_each(|v| *v = 0);
        self.epoch_received.iter_mut().for_each(|v| *v = 0);
        out
    }

    pub fn total_sent(&self) -> &[u64] {
        &self.total_sent
    }

    pub fn total_received(&self) -> &[u64] {
        &self.total_received
    }
}
