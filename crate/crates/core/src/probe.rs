//! Instantaneous power sources.
//!
//! A [`Probe`] yields [`PowerSample`]s for one or more sources. Replay probes
//! read a recorded trace file and are what every test in this crate uses;
//! live backends are compiled in with the `hardware` feature.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Roots relative trace paths when set.
pub const TRACE_DIR_ENV: &str = "CARBONLEDGER_TRACE_DIR";

/// One timestamped power reading from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub source_id: String,
    /// Milliseconds since the Unix epoch (or since trace start for replay fixtures).
    pub timestamp: i64,
    pub watts: f64,
}

impl PowerSample {
    pub fn new(source_id: impl Into<String>, timestamp: i64, watts: f64) -> Self {
        PowerSample {
            source_id: source_id.into(),
            timestamp,
            watts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    GpuManagementInterface,
    CpuEnergyCounter,
    Replay,
    /// Constant-wattage stand-in for hardware, stamped with wall-clock time.
    Synthetic,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProbeKind::GpuManagementInterface => "gpu",
            ProbeKind::CpuEnergyCounter => "cpu",
            ProbeKind::Replay => "replay",
            ProbeKind::Synthetic => "stub",
        };
        f.write_str(s)
    }
}

/// What to open. `source_id` is a prefix: device `i` reports as `{source_id}{i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDescriptor {
    pub source_id: String,
    pub kind: ProbeKind,
    pub device_count: u32,
    pub trace_path: Option<PathBuf>,
    /// Only used by [`ProbeKind::Synthetic`].
    pub stub_watts: Option<f64>,
}

impl ProbeDescriptor {
    pub fn replay(path: impl Into<PathBuf>, device_count: u32) -> Self {
        ProbeDescriptor {
            source_id: "replay".into(),
            kind: ProbeKind::Replay,
            device_count,
            trace_path: Some(path.into()),
            stub_watts: None,
        }
    }

    pub fn gpu(device_count: u32) -> Self {
        ProbeDescriptor {
            source_id: "gpu".into(),
            kind: ProbeKind::GpuManagementInterface,
            device_count,
            trace_path: None,
            stub_watts: None,
        }
    }

    pub fn cpu() -> Self {
        ProbeDescriptor {
            source_id: "cpu".into(),
            kind: ProbeKind::CpuEnergyCounter,
            device_count: 1,
            trace_path: None,
            stub_watts: None,
        }
    }

    pub fn synthetic(watts: f64, device_count: u32) -> Self {
        ProbeDescriptor {
            source_id: "stub".into(),
            kind: ProbeKind::Synthetic,
            device_count,
            trace_path: None,
            stub_watts: Some(watts),
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn source_ids(&self) -> Vec<String> {
        (0..self.device_count)
            .map(|i| format!("{}{}", self.source_id, i))
            .collect()
    }

    fn validate(&self) -> Result<(), ProbeError> {
        if self.device_count == 0 {
            return Err(ProbeError::InvalidDescriptor(
                "device_count must be at least 1".into(),
            ));
        }
        match self.kind {
            ProbeKind::Replay if self.trace_path.is_none() => Err(ProbeError::InvalidDescriptor(
                "replay probe needs a trace path".into(),
            )),
            ProbeKind::Synthetic => match self.stub_watts {
                Some(w) if w.is_finite() && w >= 0.0 => Ok(()),
                _ => Err(ProbeError::InvalidDescriptor(
                    "synthetic probe needs a non-negative wattage".into(),
                )),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("power backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("{path}:{line}: {message}")]
    TraceParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read trace {path}: {source}")]
    TraceIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Result of one [`Probe::read`] call.
#[derive(Debug, Clone, PartialEq)]
pub enum Reading {
    /// At most one sample per source. Sources whose read failed are absent
    /// and counted in [`Probe::skipped_reads`].
    Samples(Vec<PowerSample>),
    EndOfTrace,
}

/// How a sampler should drive a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// Read once per sampling tick; timestamps come from the wall clock.
    Live,
    /// Recorded data; drain it, timestamps are the trace's own.
    Replay,
}

/// A single-consumer power source handle.
pub trait Probe: Send {
    fn sources(&self) -> &[String];
    fn pacing(&self) -> Pacing;
    fn read(&mut self) -> Reading;
    fn skipped_reads(&self) -> usize {
        0
    }
}

/// Resolves `path` against `CARBONLEDGER_TRACE_DIR` when it is relative.
pub fn resolve_trace_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(TRACE_DIR_ENV) {
            return PathBuf::from(dir).join(path);
        }
    }
    path.to_path_buf()
}

/// Parses the `timestamp_ms,watts` trace format.
pub fn parse_trace(text: &str, path_label: &str) -> Result<Vec<(i64, f64)>, ProbeError> {
    let mut out: Vec<(i64, f64)> = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ProbeError::TraceParse {
            path: path_label.to_string(),
            line: line_no,
            message,
        };
        let (ts, w) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `timestamp_ms,watts`, got {line:?}")))?;
        let ts: i64 = ts
            .trim()
            .parse()
            .map_err(|_| err(format!("bad timestamp {ts:?}")))?;
        let watts: f64 = w
            .trim()
            .parse()
            .map_err(|_| err(format!("bad wattage {w:?}")))?;
        if !watts.is_finite() || watts < 0.0 {
            return Err(err(format!("wattage must be finite and >= 0, got {watts}")));
        }
        if let Some(&(prev, _)) = out.last() {
            if ts <= prev {
                return Err(err(format!(
                    "timestamps must strictly increase ({ts} after {prev})"
                )));
            }
        }
        out.push((ts, watts));
    }
    Ok(out)
}

/// Renders entries in the trace format, inverse of [`parse_trace`].
pub fn format_trace(entries: &[(i64, f64)]) -> String {
    let mut s = String::new();
    for (ts, w) in entries {
        s.push_str(&format!("{ts},{w}\n"));
    }
    s
}

/// Replays one trace for every configured device.
#[derive(Debug)]
pub struct ReplayProbe {
    sources: Vec<String>,
    entries: Vec<(i64, f64)>,
    cursor: usize,
}

impl ReplayProbe {
    pub fn from_entries(sources: Vec<String>, entries: Vec<(i64, f64)>) -> Self {
        ReplayProbe {
            sources,
            entries,
            cursor: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }
}

impl Probe for ReplayProbe {
    fn sources(&self) -> &[String] {
        &self.sources
    }

    fn pacing(&self) -> Pacing {
        Pacing::Replay
    }

    fn read(&mut self) -> Reading {
        match self.entries.get(self.cursor) {
            None => Reading::EndOfTrace,
            Some(&(ts, w)) => {
                self.cursor += 1;
                Reading::Samples(
                    self.sources
                        .iter()
                        .map(|s| PowerSample::new(s.clone(), ts, w))
                        .collect(),
                )
            }
        }
    }
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

/// Reports a fixed wattage on every device at the current wall-clock time.
#[derive(Debug)]
pub struct SyntheticProbe {
    sources: Vec<String>,
    watts: f64,
    last_ts: Option<i64>,
}

impl SyntheticProbe {
    pub fn new(sources: Vec<String>, watts: f64) -> Self {
        SyntheticProbe {
            sources,
            watts,
            last_ts: None,
        }
    }
}

impl Probe for SyntheticProbe {
    fn sources(&self) -> &[String] {
        &self.sources
    }

    fn pacing(&self) -> Pacing {
        Pacing::Live
    }

    fn read(&mut self) -> Reading {
        let ts = monotonic_stamp(&mut self.last_ts, now_ms());
        Reading::Samples(
            self.sources
                .iter()
                .map(|s| PowerSample::new(s.clone(), ts, self.watts))
                .collect(),
        )
    }
}

/// Bumps `now` past the previous stamp so timestamps stay strictly increasing
/// even when two reads land in the same millisecond.
pub(crate) fn monotonic_stamp(last: &mut Option<i64>, now: i64) -> i64 {
    let ts = match *last {
        Some(prev) if now <= prev => prev + 1,
        _ => now,
    };
    *last = Some(ts);
    ts
}

/// Opens the backend behind `descriptor`.
pub fn open_probe(descriptor: &ProbeDescriptor) -> Result<Box<dyn Probe>, ProbeError> {
    descriptor.validate()?;
    let sources = descriptor.source_ids();
    match descriptor.kind {
        ProbeKind::Replay => {
            let raw = descriptor.trace_path.as_deref().expect("validated");
            let path = resolve_trace_path(raw);
            let label = path.display().to_string();
            let text = fs::read_to_string(&path).map_err(|source| ProbeError::TraceIo {
                path: label.clone(),
                source,
            })?;
            let entries = parse_trace(&text, &label)?;
            Ok(Box::new(ReplayProbe::from_entries(sources, entries)))
        }
        ProbeKind::Synthetic => Ok(Box::new(SyntheticProbe::new(
            sources,
            descriptor.stub_watts.expect("validated"),
        ))),
        ProbeKind::GpuManagementInterface => open_gpu(sources),
        ProbeKind::CpuEnergyCounter => open_cpu(sources),
    }
}

#[cfg(feature = "hardware")]
fn open_gpu(sources: Vec<String>) -> Result<Box<dyn Probe>, ProbeError> {
    Ok(Box::new(crate::hardware::SmiProbe::open(sources)?))
}

#[cfg(not(feature = "hardware"))]
fn open_gpu(_sources: Vec<String>) -> Result<Box<dyn Probe>, ProbeError> {
    Err(ProbeError::BackendUnavailable(
        "built without the `hardware` feature".into(),
    ))
}

#[cfg(feature = "hardware")]
fn open_cpu(sources: Vec<String>) -> Result<Box<dyn Probe>, ProbeError> {
    Ok(Box::new(crate::hardware::PowercapProbe::open(sources)?))
}

#[cfg(not(feature = "hardware"))]
fn open_cpu(_sources: Vec<String>) -> Result<Box<dyn Probe>, ProbeError> {
    Err(ProbeError::BackendUnavailable(
        "built without the `hardware` feature".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn trace_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn drain(probe: &mut dyn Probe) -> Vec<PowerSample> {
        let mut out = Vec::new();
        while let Reading::Samples(s) = probe.read() {
            out.extend(s);
        }
        out
    }

    #[test]
    fn replay_two_samples() {
        let f = trace_file("0,100\n1000,100");
        let mut p = open_probe(&ProbeDescriptor::replay(f.path(), 1)).unwrap();
        let s = drain(p.as_mut());
        assert_eq!(
            s,
            vec![
                PowerSample::new("replay0", 0, 100.0),
                PowerSample::new("replay0", 1000, 100.0)
            ]
        );
    }

    #[test]
    fn empty_trace_is_not_an_error() {
        let f = trace_file("");
        let mut p = open_probe(&ProbeDescriptor::replay(f.path(), 1)).unwrap();
        assert_eq!(p.read(), Reading::EndOfTrace);
    }

    #[test]
    fn constant_trace_and_exhaustion() {
        let f = trace_file("# header\n0,250\n500,250\n1000,250\n");
        let mut p = open_probe(&ProbeDescriptor::replay(f.path(), 1)).unwrap();
        for _ in 0..3 {
            match p.read() {
                Reading::Samples(s) => assert_eq!(s[0].watts, 250.0),
                Reading::EndOfTrace => panic!("early end"),
            }
        }
        assert_eq!(p.read(), Reading::EndOfTrace);
        assert_eq!(p.read(), Reading::EndOfTrace);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = trace_file("0,100\n# c\n1000;100\n");
        let err = open_probe(&ProbeDescriptor::replay(f.path(), 1))
            .err()
            .expect("parse error");
        match err {
            ProbeError::TraceParse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        assert!(parse_trace("5,1\n5,2\n", "t").is_err());
        assert!(parse_trace("0,-1\n", "t").is_err());
    }

    #[test]
    fn gpu_descriptor_names_devices() {
        assert_eq!(ProbeDescriptor::gpu(2).source_ids(), vec!["gpu0", "gpu1"]);
    }

    #[test]
    fn synthetic_stub_reports_configured_watts() {
        let mut p = open_probe(&ProbeDescriptor::synthetic(256.6, 1)).unwrap();
        let mut last = i64::MIN;
        for _ in 0..5 {
            let Reading::Samples(s) = p.read() else {
                panic!("stub never ends")
            };
            assert_eq!(s[0].watts, 256.6);
            assert!(s[0].timestamp > last);
            last = s[0].timestamp;
        }
    }

    #[test]
    fn replay_without_path_is_invalid() {
        let mut d = ProbeDescriptor::replay("x", 1);
        d.trace_path = None;
        assert!(matches!(
            open_probe(&d),
            Err(ProbeError::InvalidDescriptor(_))
        ));
        assert!(matches!(
            open_probe(&ProbeDescriptor::replay("x", 0)),
            Err(ProbeError::InvalidDescriptor(_))
        ));
    }

    #[cfg(not(feature = "hardware"))]
    #[test]
    fn hardware_is_unavailable_without_feature() {
        assert!(matches!(
            open_probe(&ProbeDescriptor::gpu(1)),
            Err(ProbeError::BackendUnavailable(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn replay_reproduces_trace_exactly(
            steps in proptest::collection::vec((1i64..100_000, 0.0f64..1e4), 0..50)
        ) {
            let mut ts = 0i64;
            let entries: Vec<(i64, f64)> = steps.iter().map(|&(dt, w)| { ts += dt; (ts, w) }).collect();
            let parsed = parse_trace(&format_trace(&entries), "p").unwrap();
            proptest::prop_assert_eq!(&parsed, &entries);
            let mut p = ReplayProbe::from_entries(vec!["r0".into()], parsed);
            let got: Vec<(i64, f64)> = drain(&mut p).into_iter().map(|s| (s.timestamp, s.watts)).collect();
            proptest::prop_assert_eq!(got, entries);
        }
    }
}
