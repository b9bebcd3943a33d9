//! Append-only JSON Lines ledger of finished experiments, and report rendering.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{co2e_at, EquivalenceFactors};
use crate::forecast::{Forecast, PhaseSummary};

/// Env var naming the default ledger file.
pub const LEDGER_ENV: &str = "CARBONLEDGER_LEDGER";
pub const SCHEMA_VERSION: u32 = 1;

const CONSISTENCY_TOL: f64 = 1e-9;
const OVERLAP_TOL_HOURS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    #[default]
    Completed,
    /// The workload exited unsuccessfully.
    Aborted,
    /// The tracker was interrupted; totals are partial.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub basis_epochs: u32,
    pub planned_epochs: u32,
    pub predicted_duration_hours: f64,
    pub predicted_kwh: f64,
    pub predicted_co2e_kg: f64,
    pub includes_setup: bool,
}

impl From<&Forecast> for ForecastSummary {
    fn from(f: &Forecast) -> Self {
        ForecastSummary {
            basis_epochs: f.basis_epochs,
            planned_epochs: f.planned_epochs,
            predicted_duration_hours: f.predicted_duration_hours,
            predicted_kwh: f.predicted_kwh,
            predicted_co2e_kg: f.predicted_co2e_kg,
            includes_setup: f.includes_setup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub label: String,
    pub started_at: DateTime<Utc>,
    pub duration_hours: f64,
    pub epochs_completed: u32,
    pub energy_kwh: f64,
    pub intensity_g_per_kwh: f64,
    pub pue: f64,
    pub co2e_kg: f64,
    pub car_km: f64,
    pub car_kg_per_km: f64,
    pub region: String,
    #[serde(default)]
    pub phase_breakdown: Vec<PhaseSummary>,
    #[serde(default)]
    pub quality_notes: Vec<String>,
    #[serde(default)]
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastSummary>,
}

impl ExperimentRecord {
    /// A record whose derived columns (CO2e, car km) are computed from the
    /// energy, intensity and car factor.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment_id: impl Into<String>,
        label: impl Into<String>,
        started_at: DateTime<Utc>,
        duration_hours: f64,
        epochs_completed: u32,
        energy_kwh: f64,
        region: impl Into<String>,
        intensity_g_per_kwh: f64,
        pue: f64,
        factors: &EquivalenceFactors,
    ) -> Self {
        let co2e_kg = co2e_at(energy_kwh, intensity_g_per_kwh);
        ExperimentRecord {
            experiment_id: experiment_id.into(),
            label: label.into(),
            started_at,
            duration_hours,
            epochs_completed,
            energy_kwh,
            intensity_g_per_kwh,
            pue,
            co2e_kg,
            car_km: factors.car_km(co2e_kg),
            car_kg_per_km: factors.car_kg_per_km,
            region: region.into(),
            phase_breakdown: Vec::new(),
            quality_notes: Vec::new(),
            status: RunStatus::Completed,
            exit_code: None,
            forecast: None,
        }
    }

    pub fn check(&self) -> Result<(), LedgerError> {
        let bad = |m: String| {
            Err(LedgerError::InconsistentRecord(format!(
                "{}: {m}",
                self.experiment_id
            )))
        };
        for (name, v) in [
            ("duration_hours", self.duration_hours),
            ("energy_kwh", self.energy_kwh),
            ("co2e_kg", self.co2e_kg),
            ("car_km", self.car_km),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.intensity_g_per_kwh > 0.0 && self.car_kg_per_km > 0.0 && self.pue >= 1.0) {
            return bad("intensity and car factor must be positive, PUE >= 1".into());
        }
        let want = co2e_at(self.energy_kwh, self.intensity_g_per_kwh);
        if !within(self.co2e_kg, want) {
            return bad(format!(
                "co2e_kg {} != energy x intensity {want}",
                self.co2e_kg
            ));
        }
        let km = self.co2e_kg / self.car_kg_per_km;
        if !within(self.car_km, km) {
            return bad(format!("car_km {} != co2e / car factor {km}", self.car_km));
        }
        let phases: f64 = self.phase_breakdown.iter().map(|p| p.duration_hours).sum();
        if self.duration_hours < phases - OVERLAP_TOL_HOURS {
            return bad(format!(
                "duration {} h shorter than its phases ({phases} h)",
                self.duration_hours
            ));
        }
        Ok(())
    }
}

fn within(got: f64, want: f64) -> bool {
    let scale = got.abs().max(want.abs());
    scale == 0.0 || (got - want).abs() <= CONSISTENCY_TOL * scale
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("inconsistent record {0}")]
    InconsistentRecord(String),
    #[error("ledger {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ledger line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no records selected")]
    EmptySelection,
    #[error("unknown baseline {0}")]
    UnknownBaseline(String),
    #[error("report: {0}")]
    Render(String),
}

#[derive(Serialize)]
struct LineOut<'a> {
    v: u32,
    #[serde(flatten)]
    record: &'a ExperimentRecord,
}

#[derive(Deserialize)]
struct LineIn {
    v: u32,
    #[serde(flatten)]
    record: ExperimentRecord,
}

/// Where [`append_record`] put a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerPosition {
    /// Zero-based record index.
    pub index: usize,
    pub byte_offset: u64,
}

pub fn encode_line(record: &ExperimentRecord) -> String {
    let mut s = serde_json::to_string(&LineOut {
        v: SCHEMA_VERSION,
        record,
    })
    .expect("record serializes");
    s.push('\n');
    s
}

pub fn decode_line(line: &str, line_no: usize) -> Result<ExperimentRecord, LedgerError> {
    let parsed: LineIn = serde_json::from_str(line).map_err(|e| LedgerError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if parsed.v != SCHEMA_VERSION {
        return Err(LedgerError::Parse {
            line: line_no,
            message: format!("unsupported schema version {}", parsed.v),
        });
    }
    Ok(parsed.record)
}

/// Appends one line under an exclusive lock; earlier bytes are never touched.
pub fn append_record(
    path: &Path,
    record: &ExperimentRecord,
) -> Result<LedgerPosition, LedgerError> {
    record.check()?;
    let io = |source| LedgerError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .read(true)
        .open(path)
        .map_err(io)?;
    file.lock().map_err(io)?;
    let result = (|| {
        file.seek(SeekFrom::Start(0))?;
        let index = BufReader::new(&file)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .count();
        let byte_offset = file.seek(SeekFrom::End(0))?;
        file.write_all(encode_line(record).as_bytes())?;
        file.flush()?;
        Ok(LedgerPosition { index, byte_offset })
    })();
    let _ = file.unlock();
    result.map_err(io)
}

/// Every record in the ledger, in append order. A missing file is empty.
pub fn read_ledger(path: &Path) -> Result<Vec<ExperimentRecord>, LedgerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(LedgerError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LedgerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(&line, i + 1)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "text-table" | "table" => Ok(ReportFormat::TextTable),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const TABLE_HEADER: [&str; 5] = [
    "Experiment",
    "Overall time (hr)",
    "Energy use (KWh)",
    "CO2eq. (kg)",
    "Travel by car (km)",
];

const CSV_HEADER: [&str; 13] = [
    "experiment_id",
    "label",
    "started_at",
    "duration_hours",
    "epochs_completed",
    "energy_kwh",
    "intensity_g_per_kwh",
    "pue",
    "co2e_kg",
    "car_km",
    "car_kg_per_km",
    "region",
    "status",
];

pub fn render_report(
    records: &[ExperimentRecord],
    format: ReportFormat,
) -> Result<String, LedgerError> {
    if records.is_empty() {
        return Err(LedgerError::EmptySelection);
    }
    match format {
        ReportFormat::TextTable => Ok(render_table(records)),
        ReportFormat::Csv => render_csv(records),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(records)
                .map_err(|e| LedgerError::Render(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
    }
}

fn render_table(records: &[ExperimentRecord]) -> String {
    let rows: Vec<[String; 5]> = records
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.3}", r.duration_hours),
                format!("{:.2}", r.energy_kwh),
                format!("{:.2}", r.co2e_kg),
                format!("{:.2}", r.car_km),
            ]
        })
        .collect();
    let mut widths = TABLE_HEADER.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let mut parts = Vec::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                parts.push(format!("{c:<w$}", w = widths[i]));
            } else {
                parts.push(format!("{c:>w$}", w = widths[i]));
            }
        }
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(&mut out, &TABLE_HEADER);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-|-"));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

fn render_csv(records: &[ExperimentRecord]) -> Result<String, LedgerError> {
    let err = |e: csv::Error| LedgerError::Render(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        let status = match r.status {
            RunStatus::Completed => "completed",
            RunStatus::Aborted => "aborted",
            RunStatus::Interrupted => "interrupted",
        };
        w.write_record([
            r.experiment_id.clone(),
            r.label.clone(),
            r.started_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            r.duration_hours.to_string(),
            r.epochs_completed.to_string(),
            r.energy_kwh.to_string(),
            r.intensity_g_per_kwh.to_string(),
            r.pue.to_string(),
            r.co2e_kg.to_string(),
            r.car_km.to_string(),
            r.car_kg_per_km.to_string(),
            r.region.clone(),
            status.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LedgerError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LedgerError::Render(e.to_string()))
}

/// Parses the JSON report form back into records.
pub fn parse_report_json(text: &str) -> Result<Vec<ExperimentRecord>, LedgerError> {
    serde_json::from_str(text).map_err(|e| LedgerError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub experiment_id: String,
    pub label: String,
    pub delta_hours: f64,
    pub delta_kwh: f64,
    pub delta_co2e_kg: f64,
    /// `None` when the baseline value is zero.
    pub time_ratio: Option<f64>,
    pub energy_ratio: Option<f64>,
    pub co2e_ratio: Option<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b)
}

/// Deltas and ratios of every record against the one whose id (or, failing
/// that, label) equals `baseline`.
pub fn compare(
    records: &[ExperimentRecord],
    baseline: &str,
) -> Result<Vec<Comparison>, LedgerError> {
    let base = records
        .iter()
        .find(|r| r.experiment_id == baseline)
        .or_else(|| records.iter().find(|r| r.label == baseline))
        .ok_or_else(|| LedgerError::UnknownBaseline(baseline.to_string()))?;
    Ok(records
        .iter()
        .map(|r| Comparison {
            experiment_id: r.experiment_id.clone(),
            label: r.label.clone(),
            delta_hours: r.duration_hours - base.duration_hours,
            delta_kwh: r.energy_kwh - base.energy_kwh,
            delta_co2e_kg: r.co2e_kg - base.co2e_kg,
            time_ratio: ratio(r.duration_hours, base.duration_hours),
            energy_ratio: ratio(r.energy_kwh, base.energy_kwh),
            co2e_ratio: ratio(r.co2e_kg, base.co2e_kg),
        })
        .collect())
}

pub fn render_comparison(rows: &[Comparison], baseline: &str) -> String {
    let fmt_ratio = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}x"));
    let mut out = format!("baseline: {baseline}\n");
    let label_w = rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max(10);
    let _ = writeln!(
        out,
        "{:<label_w$} | {:>9} | {:>9} | {:>9} | {:>7} | {:>7} | {:>7}",
        "Experiment", "dt (hr)", "dE (KWh)", "dCO2 (kg)", "time", "energy", "co2e"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<label_w$} | {:>+9.3} | {:>+9.2} | {:>+9.2} | {:>7} | {:>7} | {:>7}",
            r.label,
            r.delta_hours,
            r.delta_kwh,
            r.delta_co2e_kg,
            fmt_ratio(r.time_ratio),
            fmt_ratio(r.energy_ratio),
            fmt_ratio(r.co2e_ratio)
        );
    }
    out
}

/// Parses the numeric cells of a text-table report: `(label, [hours, kWh, kg, km])`.
pub fn parse_table(text: &str) -> Vec<(String, [f64; 4])> {
    text.lines()
        .skip(2)
        .filter_map(|l| {
            let cells: Vec<&str> = l.split(" | ").map(str::trim).collect();
            if cells.len() != 5 {
                return None;
            }
            let mut nums = [0.0; 4];
            for (n, c) in nums.iter_mut().zip(&cells[1..]) {
                *n = c.parse().ok()?;
            }
            Some((cells[0].to_string(), nums))
        })
        .collect()
}
