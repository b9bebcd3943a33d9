//! Power-to-energy conversion.
//!
//! Two routes that must agree: the closed form `pue · t · g · p_g / 1000`
//! (hours, device count, average watts per device) and a trapezoidal
//! integral over sampled traces. Units are fixed: hours in, watts in, kWh out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{ms_to_hours, SampleLog};

/// Datacenter PUE used by default (German average).
pub const DEFAULT_PUE: f64 = 1.55;

/// A gap longer than this many sampling intervals is bridged with the last
/// observed value instead of the trapezoid, and flagged.
pub const GAP_FACTOR: u64 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("PUE must be >= 1, got {0}")]
    PueBelowOne(f64),
    #[error("negative power sample {watts} W from {source_id} at {timestamp}")]
    NegativeWatts {
        source_id: String,
        timestamp: i64,
        watts: f64,
    },
    #[error("source {0} needs at least two samples for an average")]
    InsufficientSamples(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    /// Device-side energy.
    pub raw_kwh: f64,
    pub pue: f64,
    /// `raw_kwh × pue`.
    pub facility_kwh: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quality_notes: Vec<String>,
}

impl EnergyResult {
    fn new(raw_kwh: f64, pue: f64) -> Self {
        EnergyResult {
            raw_kwh,
            pue,
            facility_kwh: raw_kwh * pue,
            quality_notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub duration_hours: f64,
    pub gpu_count: u32,
    /// Average draw per device, in watts.
    pub avg_gpu_watts: f64,
    pub pue: f64,
}

fn check_pue(pue: f64) -> Result<(), EnergyError> {
    if !(pue.is_finite() && pue > 0.0) {
        return Err(EnergyError::NonPositiveParameter {
            name: "pue",
            value: pue,
        });
    }
    if pue < 1.0 {
        return Err(EnergyError::PueBelowOne(pue));
    }
    Ok(())
}

pub fn closed_form_energy(params: &RunParams) -> Result<EnergyResult, EnergyError> {
    for (name, value) in [
        ("duration_hours", params.duration_hours),
        ("gpu_count", params.gpu_count as f64),
        ("avg_gpu_watts", params.avg_gpu_watts),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(EnergyError::NonPositiveParameter { name, value });
        }
    }
    check_pue(params.pue)?;
    let raw = params.duration_hours * params.gpu_count as f64 * params.avg_gpu_watts / 1000.0;
    Ok(EnergyResult::new(raw, params.pue))
}

/// Watt-hours and covered hours, keyed by source.
type PerSource = BTreeMap<String, (f64, f64)>;

/// Per-source watt-hours and flagged gaps.
fn source_energy_wh(log: &SampleLog) -> Result<(PerSource, Vec<String>), EnergyError> {
    let gap_ms = log.sampling_interval_ms.saturating_mul(GAP_FACTOR);
    let mut notes = Vec::new();
    let mut out = BTreeMap::new();
    for (src, seq) in log.by_source() {
        if let Some(bad) = seq.iter().find(|s| s.watts.is_nan() || s.watts < 0.0) {
            return Err(EnergyError::NegativeWatts {
                source_id: bad.source_id.clone(),
                timestamp: bad.timestamp,
                watts: bad.watts,
            });
        }
        let mut wh = 0.0;
        for pair in seq.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let dt_ms = b.timestamp - a.timestamp;
            let dt_h = ms_to_hours(dt_ms);
            if gap_ms > 0 && dt_ms as u64 > gap_ms {
                notes.push(format!(
                    "{src}: {dt_ms} ms gap at {} bridged with last value",
                    a.timestamp
                ));
                wh += a.watts * dt_h;
            } else {
                wh += 0.5 * (a.watts + b.watts) * dt_h;
            }
        }
        let span_h = match (seq.first(), seq.last()) {
            (Some(a), Some(b)) => ms_to_hours(b.timestamp - a.timestamp),
            _ => 0.0,
        };
        out.insert(src.to_string(), (wh, span_h));
    }
    Ok((out, notes))
}

/// Trapezoidal energy summed over sources.
pub fn integrate_energy(log: &SampleLog, pue: f64) -> Result<EnergyResult, EnergyError> {
    check_pue(pue)?;
    let (per_source, notes) = source_energy_wh(log)?;
    let wh = per_source.values().fold(0.0, |acc, (wh, _)| acc + wh);
    let mut result = EnergyResult::new(wh / 1000.0, pue);
    result.quality_notes = notes;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragePower {
    pub per_source: BTreeMap<String, f64>,
    /// Total energy over the log's overall span, so that a single device at
    /// this wattage for [`AveragePower::duration_hours`] matches the integral.
    pub combined: f64,
    pub duration_hours: f64,
}

/// Time-weighted mean power per source and combined.
pub fn average_power(log: &SampleLog) -> Result<AveragePower, EnergyError> {
    let (per_source, _) = source_energy_wh(log)?;
    let mut means = BTreeMap::new();
    for (src, (wh, span_h)) in &per_source {
        if *span_h <= 0.0 {
            return Err(EnergyError::InsufficientSamples(src.clone()));
        }
        means.insert(src.clone(), wh / span_h);
    }
    let duration_hours = log.duration_hours();
    if duration_hours <= 0.0 {
        return Err(EnergyError::InsufficientSamples("<all>".into()));
    }
    let total_wh = per_source.values().fold(0.0, |acc, (wh, _)| acc + wh);
    Ok(AveragePower {
        per_source: means,
        combined: total_wh / duration_hours,
        duration_hours,
    })
}
