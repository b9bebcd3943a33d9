//! Periodic sampling of probes plus tailing of the workload's epoch-event file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{now_ms, Pacing, PowerSample, Probe, Reading};

/// Env var carrying the event file path to the monitored workload.
pub const EVENTS_ENV: &str = "CARBONLEDGER_EVENTS";

pub const DEFAULT_INTERVAL_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    TrainStart,
    EpochStart,
    EpochEnd,
    Metric,
    TrainEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub kind: EventKind,
    /// 0 for TRAIN_START / TRAIN_END.
    pub epoch_index: u32,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_value: Option<f64>,
}

impl EpochEvent {
    pub fn train_start(timestamp: i64) -> Self {
        Self::plain(EventKind::TrainStart, 0, timestamp)
    }

    pub fn train_end(timestamp: i64) -> Self {
        Self::plain(EventKind::TrainEnd, 0, timestamp)
    }

    pub fn epoch_start(epoch: u32, timestamp: i64) -> Self {
        Self::plain(EventKind::EpochStart, epoch, timestamp)
    }

    pub fn epoch_end(epoch: u32, timestamp: i64) -> Self {
        Self::plain(EventKind::EpochEnd, epoch, timestamp)
    }

    pub fn metric(epoch: u32, name: impl Into<String>, value: f64, timestamp: i64) -> Self {
        EpochEvent {
            kind: EventKind::Metric,
            epoch_index: epoch,
            timestamp,
            metric_name: Some(name.into()),
            metric_value: Some(value),
        }
    }

    fn plain(kind: EventKind, epoch_index: u32, timestamp: i64) -> Self {
        EpochEvent {
            kind,
            epoch_index,
            timestamp,
            metric_name: None,
            metric_value: None,
        }
    }
}

/// Wire form, without the trailing LF.
impl fmt::Display for EpochEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::TrainStart => write!(f, "TRAIN_START {}", self.timestamp),
            EventKind::TrainEnd => write!(f, "TRAIN_END {}", self.timestamp),
            EventKind::EpochStart => {
                write!(f, "EPOCH_START {} {}", self.epoch_index, self.timestamp)
            }
            EventKind::EpochEnd => write!(f, "EPOCH_END {} {}", self.epoch_index, self.timestamp),
            EventKind::Metric => write!(
                f,
                "METRIC {} {} {} {}",
                self.epoch_index,
                self.metric_name.as_deref().unwrap_or(""),
                self.metric_value.unwrap_or(f64::NAN),
                self.timestamp
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event protocol violation: {0}")]
pub struct EventParseError(pub String);

fn parse_uint<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T, EventParseError> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(EventParseError(format!(
            "{what} must be decimal digits, got {tok:?}"
        )));
    }
    tok.parse()
        .map_err(|_| EventParseError(format!("{what} out of range: {tok:?}")))
}

fn is_decimal(tok: &str) -> bool {
    let b = tok.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

/// Parses one line of the epoch-event protocol (no trailing LF).
///
/// Tokens are separated by exactly one ASCII space; anything else is a
/// violation, including CR line endings and trailing whitespace.
pub fn parse_event_line(line: &str) -> Result<EpochEvent, EventParseError> {
    let toks: Vec<&str> = line.split(' ').collect();
    let arity = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(EventParseError(format!(
                "{} expects {} fields, got {}: {line:?}",
                toks[0],
                n,
                toks.len()
            )))
        }
    };
    let epoch = |tok: &str| -> Result<u32, EventParseError> {
        let k: u32 = parse_uint(tok, "epoch index")?;
        if k == 0 {
            return Err(EventParseError("epoch indices start at 1".into()));
        }
        Ok(k)
    };
    match toks[0] {
        "TRAIN_START" => {
            arity(2)?;
            Ok(EpochEvent::train_start(parse_uint(toks[1], "timestamp")?))
        }
        "TRAIN_END" => {
            arity(2)?;
            Ok(EpochEvent::train_end(parse_uint(toks[1], "timestamp")?))
        }
        "EPOCH_START" => {
            arity(3)?;
            Ok(EpochEvent::epoch_start(
                epoch(toks[1])?,
                parse_uint(toks[2], "timestamp")?,
            ))
        }
        "EPOCH_END" => {
            arity(3)?;
            Ok(EpochEvent::epoch_end(
                epoch(toks[1])?,
                parse_uint(toks[2], "timestamp")?,
            ))
        }
        "METRIC" => {
            arity(5)?;
            let k: u32 = parse_uint(toks[1], "epoch index")?;
            let name = toks[2];
            if name.is_empty() || name.chars().any(char::is_control) {
                return Err(EventParseError(format!("bad metric name {name:?}")));
            }
            if !is_decimal(toks[3]) {
                return Err(EventParseError(format!("bad metric value {:?}", toks[3])));
            }
            let value: f64 = toks[3]
                .parse()
                .map_err(|_| EventParseError(format!("bad metric value {:?}", toks[3])))?;
            if !value.is_finite() {
                return Err(EventParseError(format!(
                    "metric value overflows: {:?}",
                    toks[3]
                )));
            }
            Ok(EpochEvent::metric(
                k,
                name,
                value,
                parse_uint(toks[4], "timestamp")?,
            ))
        }
        other => Err(EventParseError(format!("unknown event {other:?}"))),
    }
}

/// Ordering rules over a parsed event sequence: epochs numbered 1, 2, … and
/// every EPOCH_END k preceded by its EPOCH_START k.
pub fn protocol_violations(events: &[EpochEvent]) -> Vec<String> {
    let mut out = Vec::new();
    let mut next_epoch = 1u32;
    let mut open: Option<u32> = None;
    for ev in events {
        match ev.kind {
            EventKind::EpochStart => {
                if ev.epoch_index != next_epoch {
                    out.push(format!(
                        "EPOCH_START {} out of sequence (expected {next_epoch})",
                        ev.epoch_index
                    ));
                }
                if let Some(k) = open {
                    out.push(format!(
                        "EPOCH_START {} while epoch {k} open",
                        ev.epoch_index
                    ));
                }
                open = Some(ev.epoch_index);
                next_epoch = ev.epoch_index + 1;
            }
            EventKind::EpochEnd => {
                if open != Some(ev.epoch_index) {
                    out.push(format!(
                        "EPOCH_END {} without matching EPOCH_START",
                        ev.epoch_index
                    ));
                }
                open = None;
            }
            _ => {}
        }
    }
    out
}

/// Incrementally reads complete lines appended to the event file.
#[derive(Debug)]
pub struct EventTail {
    path: PathBuf,
    offset: u64,
    partial: Vec<u8>,
    violations: usize,
    rejected: Vec<String>,
}

impl EventTail {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventTail {
            path: path.into(),
            offset: 0,
            partial: Vec::new(),
            violations: 0,
            rejected: Vec::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    /// Rejection messages, in the order encountered.
    pub fn rejected(&self) -> &[String] {
        &self.rejected
    }

    /// Returns events from lines completed since the last poll. A missing
    /// file is treated as empty.
    pub fn poll(&mut self) -> std::io::Result<Vec<EpochEvent>> {
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let len = file.metadata()?.len();
        if len < self.offset {
            // truncated underneath us: start over
            self.offset = 0;
            self.partial.clear();
        }
        file.seek(SeekFrom::Start(self.offset))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        self.offset += buf.len() as u64;
        self.partial.extend_from_slice(&buf);

        let mut out = Vec::new();
        while let Some(pos) = self.partial.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.partial.drain(..=pos).collect();
            self.ingest(&line[..line.len() - 1], &mut out);
        }
        Ok(out)
    }

    /// Final poll: also parses an unterminated last line.
    pub fn drain(&mut self) -> std::io::Result<Vec<EpochEvent>> {
        let mut out = self.poll()?;
        if !self.partial.is_empty() {
            let line = std::mem::take(&mut self.partial);
            self.ingest(&line, &mut out);
        }
        Ok(out)
    }

    fn ingest(&mut self, line: &[u8], out: &mut Vec<EpochEvent>) {
        if line.is_empty() {
            return;
        }
        let parsed = std::str::from_utf8(line)
            .map_err(|_| EventParseError("line is not UTF-8".into()))
            .and_then(parse_event_line);
        match parsed {
            Ok(ev) => out.push(ev),
            Err(e) => {
                self.violations += 1;
                self.rejected.push(e.0);
            }
        }
    }
}

/// Everything recorded during one monitored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLog {
    /// Ordered by `(timestamp, source_id)`.
    pub samples: Vec<PowerSample>,
    /// Ordered by timestamp.
    pub events: Vec<EpochEvent>,
    pub sampling_interval_ms: u64,
    #[serde(default)]
    pub protocol_violations: usize,
    #[serde(default)]
    pub skipped_reads: usize,
    /// Set when the run never emitted TRAIN_START.
    #[serde(default)]
    pub no_events: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SampleLog {
    /// Builds a log from unsorted parts with default diagnostics.
    pub fn new(
        mut samples: Vec<PowerSample>,
        mut events: Vec<EpochEvent>,
        sampling_interval_ms: u64,
    ) -> Self {
        sort_samples(&mut samples);
        events.sort_by_key(|e| e.timestamp);
        SampleLog {
            samples,
            events,
            sampling_interval_ms,
            protocol_violations: 0,
            skipped_reads: 0,
            no_events: false,
            warnings: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples grouped per source, each group in timestamp order.
    pub fn by_source(&self) -> BTreeMap<&str, Vec<&PowerSample>> {
        let mut map: BTreeMap<&str, Vec<&PowerSample>> = BTreeMap::new();
        for s in &self.samples {
            map.entry(s.source_id.as_str()).or_default().push(s);
        }
        map
    }

    /// First to last sample timestamp, across all sources.
    pub fn sample_span(&self) -> Option<(i64, i64)> {
        let first = self.samples.iter().map(|s| s.timestamp).min()?;
        let last = self.samples.iter().map(|s| s.timestamp).max()?;
        Some((first, last))
    }

    pub fn duration_hours(&self) -> f64 {
        self.sample_span()
            .map(|(a, b)| ms_to_hours(b - a))
            .unwrap_or(0.0)
    }

    pub fn completed_epochs(&self) -> Vec<u32> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::EpochEnd)
            .map(|e| e.epoch_index)
            .collect()
    }

    fn event_time(&self, kind: EventKind, epoch: u32) -> Option<i64> {
        self.events
            .iter()
            .find(|e| e.kind == kind && e.epoch_index == epoch)
            .map(|e| e.timestamp)
    }

    /// `[start, end]` of `phase`, in ms.
    pub fn phase_window(&self, phase: Phase) -> Result<(i64, i64), SamplerError> {
        let unknown = || SamplerError::UnknownPhase(phase);
        match phase {
            Phase::Full => {
                let span = self.sample_span();
                let start = self
                    .event_time(EventKind::TrainStart, 0)
                    .or(span.map(|s| s.0))
                    .ok_or_else(unknown)?;
                let end = self
                    .event_time(EventKind::TrainEnd, 0)
                    .or(span.map(|s| s.1))
                    .ok_or_else(unknown)?;
                Ok((start, end.max(start)))
            }
            Phase::Setup => {
                let start = self
                    .event_time(EventKind::TrainStart, 0)
                    .ok_or_else(unknown)?;
                let end = self
                    .event_time(EventKind::EpochStart, 1)
                    .ok_or_else(unknown)?;
                Ok((start, end))
            }
            Phase::Epoch(k) => {
                let start = self
                    .event_time(EventKind::EpochStart, k)
                    .ok_or_else(unknown)?;
                let end = self
                    .event_time(EventKind::EpochEnd, k)
                    .ok_or_else(unknown)?;
                Ok((start, end))
            }
        }
    }

    pub fn metric(&self, epoch: u32, name: &str) -> Option<f64> {
        self.events
            .iter()
            .rev()
            .find(|e| {
                e.kind == EventKind::Metric
                    && e.epoch_index == epoch
                    && e.metric_name.as_deref() == Some(name)
            })
            .and_then(|e| e.metric_value)
    }
}

pub(crate) fn ms_to_hours(ms: i64) -> f64 {
    ms as f64 / 3_600_000.0
}

fn sort_samples(samples: &mut [PowerSample]) {
    samples.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.source_id.cmp(&b.source_id))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Full,
    /// TRAIN_START up to EPOCH_START 1.
    Setup,
    Epoch(u32),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Full => f.write_str("total"),
            Phase::Setup => f.write_str("setup"),
            Phase::Epoch(k) => write!(f, "epoch {k}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("phase {0} has no boundaries in the event log")]
    UnknownPhase(Phase),
    #[error("sampling interval must be positive")]
    ZeroInterval,
    #[error("event file {path}: {source}")]
    EventIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn interpolate(a: &PowerSample, b: &PowerSample, t: i64) -> f64 {
    let frac = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
    a.watts + (b.watts - a.watts) * frac
}

/// Samples of one source inside `[start, end]`, with linearly interpolated
/// endpoints where the source brackets a boundary without a sample on it.
fn clip_source(seq: &[&PowerSample], start: i64, end: i64) -> Vec<PowerSample> {
    let mut out = Vec::new();
    let bracket = |t: i64| -> Option<PowerSample> {
        if seq.iter().any(|s| s.timestamp == t) {
            return None;
        }
        let after = seq.iter().position(|s| s.timestamp > t)?;
        if after == 0 {
            return None;
        }
        let (a, b) = (seq[after - 1], seq[after]);
        Some(PowerSample::new(
            a.source_id.clone(),
            t,
            interpolate(a, b, t),
        ))
    };
    if let Some(s) = bracket(start) {
        out.push(s);
    }
    out.extend(
        seq.iter()
            .filter(|s| s.timestamp >= start && s.timestamp <= end)
            .map(|s| (*s).clone()),
    );
    if end > start {
        if let Some(s) = bracket(end) {
            out.push(s);
        }
    }
    out
}

/// Restricts `log` to the window `[start, end]`.
pub fn slice_window(log: &SampleLog, start: i64, end: i64) -> SampleLog {
    let mut samples = Vec::new();
    for seq in log.by_source().values() {
        samples.extend(clip_source(seq, start, end));
    }
    sort_samples(&mut samples);
    SampleLog {
        samples,
        events: log
            .events
            .iter()
            .filter(|e| e.timestamp >= start && e.timestamp <= end)
            .cloned()
            .collect(),
        sampling_interval_ms: log.sampling_interval_ms,
        protocol_violations: log.protocol_violations,
        skipped_reads: log.skipped_reads,
        no_events: log.no_events,
        warnings: log.warnings.clone(),
    }
}

/// Restricts `log` to one phase.
pub fn slice_phase(log: &SampleLog, phase: Phase) -> Result<SampleLog, SamplerError> {
    let (start, end) = log.phase_window(phase)?;
    Ok(slice_window(log, start, end))
}

/// Drives probes and the event tail for one run.
///
/// Replay probes are drained when the sampler is created; live probes are
/// read once per [`Sampler::tick`].
pub struct Sampler {
    probes: Vec<Box<dyn Probe>>,
    interval_ms: u64,
    tail: EventTail,
    samples: Vec<PowerSample>,
    events: Vec<EpochEvent>,
    started_at_ms: i64,
    has_live: bool,
    /// Leading entries of `samples` that came from replay probes.
    replayed: usize,
}

impl Sampler {
    pub fn new(
        mut probes: Vec<Box<dyn Probe>>,
        interval_ms: u64,
        event_path: impl Into<PathBuf>,
    ) -> Result<Self, SamplerError> {
        if interval_ms == 0 {
            return Err(SamplerError::ZeroInterval);
        }
        let mut samples = Vec::new();
        let mut has_live = false;
        for p in probes.iter_mut() {
            match p.pacing() {
                Pacing::Replay => {
                    while let Reading::Samples(s) = p.read() {
                        samples.extend(s);
                    }
                }
                Pacing::Live => has_live = true,
            }
        }
        let replayed = samples.len();
        Ok(Sampler {
            probes,
            interval_ms,
            tail: EventTail::new(event_path),
            samples,
            events: Vec::new(),
            started_at_ms: now_ms(),
            has_live,
            replayed,
        })
    }

    pub fn interval(&self) -> Duration {
        Duration::from_millis(self.interval_ms)
    }

    /// One sampling round. Returns the events parsed during this round.
    pub fn tick(&mut self) -> Result<Vec<EpochEvent>, SamplerError> {
        for p in self.probes.iter_mut() {
            if p.pacing() == Pacing::Live {
                if let Reading::Samples(s) = p.read() {
                    self.samples.extend(s);
                }
            }
        }
        self.poll_events(false)
    }

    fn poll_events(&mut self, last: bool) -> Result<Vec<EpochEvent>, SamplerError> {
        let res = if last {
            self.tail.drain()
        } else {
            self.tail.poll()
        };
        let new = res.map_err(|source| SamplerError::EventIo {
            path: self.tail.path().display().to_string(),
            source,
        })?;
        self.events.extend(new.iter().cloned());
        Ok(new)
    }

    pub fn events(&self) -> &[EpochEvent] {
        &self.events
    }

    /// The log as it stands, unclipped.
    pub fn snapshot(&self) -> SampleLog {
        SampleLog::new(self.samples.clone(), self.events.clone(), self.interval_ms)
    }

    /// A replay trace recorded on its own clock is shifted so its first
    /// sample lands on TRAIN_START. Traces that already overlap the run
    /// window are left alone.
    fn rebase_replay(&mut self) -> Option<String> {
        let replay = &mut self.samples[..self.replayed];
        let start = self
            .events
            .iter()
            .find(|e| e.kind == EventKind::TrainStart)?
            .timestamp;
        let end = self
            .events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::TrainEnd)
            .map_or(start, |e| e.timestamp);
        let first = replay.iter().map(|s| s.timestamp).min()?;
        let last = replay.iter().map(|s| s.timestamp).max()?;
        if first <= end && last >= start {
            return None;
        }
        let shift = start - first;
        for s in replay.iter_mut() {
            s.timestamp += shift;
        }
        Some(format!(
            "replay trace shifted by {shift} ms onto the event clock"
        ))
    }

    /// Final event poll, then assembles the log clipped to the run window.
    pub fn finish(mut self) -> Result<SampleLog, SamplerError> {
        self.poll_events(true)?;
        let rebased = self.rebase_replay();
        let mut log = SampleLog::new(
            std::mem::take(&mut self.samples),
            std::mem::take(&mut self.events),
            self.interval_ms,
        );
        let order = protocol_violations(&log.events);
        log.protocol_violations = self.tail.violations() + order.len();
        log.warnings.extend(
            self.tail
                .rejected()
                .iter()
                .cloned()
                .chain(order)
                .map(|m| format!("event: {m}")),
        );
        log.warnings.extend(rebased);
        log.skipped_reads = self.probes.iter().map(|p| p.skipped_reads()).sum();
        if !log.events.iter().any(|e| e.kind == EventKind::TrainStart) {
            log.no_events = true;
            log.warnings
                .push("no TRAIN_START event; energy covers the whole sampled span".into());
        } else if let Ok((start, end)) = log.phase_window(Phase::Full) {
            if self.has_live && start < self.started_at_ms {
                log.warnings.push(format!(
                    "clock skew: TRAIN_START precedes sampler start by {} ms",
                    self.started_at_ms - start
                ));
            }
            let clipped = slice_window(&log, start, end);
            log.samples = clipped.samples;
        }
        Ok(log)
    }
}

/// Samples until `stop` returns true, then returns the finished log.
pub fn run_sampler<F>(
    probes: Vec<Box<dyn Probe>>,
    interval_ms: u64,
    event_path: &Path,
    mut stop: F,
) -> Result<SampleLog, SamplerError>
where
    F: FnMut(&Sampler) -> bool,
{
    let mut sampler = Sampler::new(probes, interval_ms, event_path)?;
    loop {
        sampler.tick()?;
        if stop(&sampler) {
            break;
        }
        thread::sleep(sampler.interval());
    }
    sampler.finish()
}

/// Stops once TRAIN_END has been seen.
pub fn until_train_end(s: &Sampler) -> bool {
    s.events().iter().any(|e| e.kind == EventKind::TrainEnd)
}
