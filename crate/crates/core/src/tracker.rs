//! Wrap-and-track: spawn a workload, sample while it runs, and turn the
//! finished log into an [`ExperimentRecord`].

use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::carbon::{CarbonIntensity, EquivalenceFactors};
use crate::energy::{integrate_energy, EnergyError};
use crate::forecast::{predict, refine, Forecast, ForecastError, PhaseSummary};
use crate::ledger::{ExperimentRecord, ForecastSummary, RunStatus};
use crate::probe::Probe;
use crate::sampler::{
    ms_to_hours, slice_phase, EventKind, Phase, SampleLog, Sampler, SamplerError, EVENTS_ENV,
};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("cannot spawn {command}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty child command")]
    EmptyCommand,
    #[error("waiting for child: {0}")]
    Wait(#[source] std::io::Error),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// Setup phase (if the log has one) and every completed epoch.
pub fn summarize_phases(
    log: &SampleLog,
    pue: f64,
    intensity: &CarbonIntensity,
) -> Result<(Option<PhaseSummary>, Vec<PhaseSummary>), EnergyError> {
    let summarize = |phase: Phase| -> Result<Option<(f64, f64)>, EnergyError> {
        let Ok((start, end)) = log.phase_window(phase) else {
            return Ok(None);
        };
        let slice = slice_phase(log, phase).expect("window exists");
        let e = integrate_energy(&slice, pue)?;
        Ok(Some((ms_to_hours(end - start), e.facility_kwh)))
    };
    let setup = summarize(Phase::Setup)?.map(|(h, kwh)| PhaseSummary::setup(h, kwh, intensity));
    let mut epochs = Vec::new();
    for k in log.completed_epochs() {
        if let Some((h, kwh)) = summarize(Phase::Epoch(k))? {
            epochs.push(PhaseSummary::epoch(k, h, kwh, intensity));
        }
    }
    Ok((setup, epochs))
}

/// One-epoch forecast, refined over any further completed epochs.
pub fn forecast_from(
    setup: Option<&PhaseSummary>,
    epochs: &[PhaseSummary],
    planned_epochs: u32,
    intensity: &CarbonIntensity,
) -> Result<Option<Forecast>, ForecastError> {
    let Some((first, rest)) = epochs.split_first() else {
        return Ok(None);
    };
    let planned = planned_epochs.max(1);
    let mut f = predict(std::slice::from_ref(first), setup, planned, intensity)?;
    for e in rest {
        f = refine(&f, e)?;
    }
    Ok(Some(f))
}

/// Everything needed to turn a log into a record.
#[derive(Debug, Clone)]
pub struct RecordSpec {
    pub experiment_id: String,
    pub label: String,
    pub started_at: DateTime<Utc>,
    pub region: String,
    pub intensity: CarbonIntensity,
    pub pue: f64,
    pub factors: EquivalenceFactors,
    pub planned_epochs: u32,
}

/// A ledger record from a finished log. The stored forecast is the one made
/// after the first epoch, so the record carries both prediction and outcome.
pub fn build_record(
    log: &SampleLog,
    spec: &RecordSpec,
    status: RunStatus,
    exit_code: Option<i32>,
) -> Result<ExperimentRecord, TrackerError> {
    let energy = integrate_energy(log, spec.pue)?;
    let duration_hours = match log.phase_window(Phase::Full) {
        Ok((a, b)) => ms_to_hours(b - a),
        Err(_) => log.duration_hours(),
    };
    let (setup, epochs) = summarize_phases(log, spec.pue, &spec.intensity)?;
    let first = forecast_from(
        setup.as_ref(),
        &epochs[..epochs.len().min(1)],
        spec.planned_epochs,
        &spec.intensity,
    )?;
    let mut record = ExperimentRecord::new(
        spec.experiment_id.clone(),
        spec.label.clone(),
        spec.started_at,
        duration_hours,
        log.completed_epochs().len() as u32,
        energy.facility_kwh,
        spec.region.clone(),
        spec.intensity.grams_per_kwh,
        spec.pue,
        &spec.factors,
    );
    record.phase_breakdown = setup.into_iter().chain(epochs).collect();
    record.status = status;
    record.exit_code = exit_code;
    record.forecast = first.as_ref().map(ForecastSummary::from);
    let mut notes = energy.quality_notes;
    notes.extend(log.warnings.iter().cloned());
    if log.skipped_reads > 0 {
        notes.push(format!(
            "{} probe reads failed and were skipped",
            log.skipped_reads
        ));
    }
    if log.protocol_violations > 0 {
        notes.push(format!(
            "{} event protocol violations",
            log.protocol_violations
        ));
    }
    match status {
        RunStatus::Aborted => notes.push("aborted".into()),
        RunStatus::Interrupted => notes.push("interrupted".into()),
        RunStatus::Completed => {}
    }
    record.quality_notes = notes;
    Ok(record)
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

#[cfg(unix)]
extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

#[cfg(unix)]
fn install_sigint() -> libc::sighandler_t {
    INTERRUPTED.store(false, Ordering::SeqCst);
    let handler = on_sigint as extern "C" fn(libc::c_int);
    // SAFETY: the handler only stores to an atomic.
    unsafe { libc::signal(libc::SIGINT, handler as libc::sighandler_t) }
}

#[cfg(unix)]
fn restore_sigint(prev: libc::sighandler_t) {
    // SAFETY: restores the disposition returned by `signal`.
    unsafe {
        libc::signal(libc::SIGINT, prev);
    }
}

#[cfg(unix)]
fn forward_sigint(child: &Child) {
    // SAFETY: plain kill(2) on our own child's pid.
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
}

#[cfg(not(unix))]
fn install_sigint() {}
#[cfg(not(unix))]
fn restore_sigint(_: ()) {}
#[cfg(not(unix))]
fn forward_sigint(_: &Child) {}

/// Progress callbacks from [`track_child`].
pub trait RunObserver {
    /// A new epoch finished; `forecast` is refined over every epoch so far.
    fn on_forecast(&mut self, _forecast: &Forecast) {}
}

impl RunObserver for () {}

#[derive(Debug)]
pub struct TrackedRun {
    pub log: SampleLog,
    pub status: RunStatus,
    pub exit_code: Option<i32>,
}

fn exit_code(status: ExitStatus) -> Option<i32> {
    status.code()
}

/// Spawns `command` with `CARBONLEDGER_EVENTS` pointing at `event_path`,
/// samples until it exits, and returns the finished log.
#[allow(clippy::too_many_arguments)]
pub fn track_child(
    command: &[String],
    probes: Vec<Box<dyn Probe>>,
    interval_ms: u64,
    event_path: &Path,
    pue: f64,
    intensity: &CarbonIntensity,
    planned_epochs: u32,
    observer: &mut dyn RunObserver,
) -> Result<TrackedRun, TrackerError> {
    let (program, args) = command.split_first().ok_or(TrackerError::EmptyCommand)?;
    let mut sampler = Sampler::new(probes, interval_ms, event_path)?;
    let prev = install_sigint();
    let spawned = Command::new(program)
        .args(args)
        .env(EVENTS_ENV, event_path)
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(source) => {
            restore_sigint(prev);
            return Err(TrackerError::Spawn {
                command: program.clone(),
                source,
            });
        }
    };
    let result = drive(
        &mut sampler,
        &mut child,
        pue,
        intensity,
        planned_epochs,
        observer,
    );
    restore_sigint(prev);
    let (status, code) = result?;
    let log = sampler.finish()?;
    Ok(TrackedRun {
        log,
        status,
        exit_code: code,
    })
}

fn drive(
    sampler: &mut Sampler,
    child: &mut Child,
    pue: f64,
    intensity: &CarbonIntensity,
    planned_epochs: u32,
    observer: &mut dyn RunObserver,
) -> Result<(RunStatus, Option<i32>), TrackerError> {
    let mut forecast: Option<Forecast> = None;
    let mut interrupted_at: Option<Instant> = None;
    let poll = sampler.interval().min(Duration::from_millis(50));
    let mut next_tick = Instant::now();
    loop {
        let now = Instant::now();
        let new = if now >= next_tick {
            next_tick = now + sampler.interval();
            sampler.tick()?
        } else {
            Vec::new()
        };
        if new.iter().any(|e| e.kind == EventKind::EpochEnd) {
            let snap = sampler.snapshot();
            let (setup, epochs) = summarize_phases(&snap, pue, intensity)?;
            let seen = forecast.as_ref().map_or(0, |p| p.basis_epochs);
            if seen == 0 && epochs.len() > 1 {
                // several epochs landed in one tick; still report the first-epoch view
                if let Some(f1) =
                    forecast_from(setup.as_ref(), &epochs[..1], planned_epochs, intensity)?
                {
                    observer.on_forecast(&f1);
                }
            }
            let next = forecast_from(setup.as_ref(), &epochs, planned_epochs, intensity)?;
            if let Some(f) = &next {
                if f.basis_epochs != seen {
                    observer.on_forecast(f);
                }
            }
            forecast = next;
        }
        if let Some(status) = child.try_wait().map_err(TrackerError::Wait)? {
            let code = exit_code(status);
            let run_status = if interrupted_at.is_some() {
                RunStatus::Interrupted
            } else if status.success() {
                RunStatus::Completed
            } else {
                RunStatus::Aborted
            };
            return Ok((run_status, code));
        }
        if INTERRUPTED.swap(false, Ordering::SeqCst) && interrupted_at.is_none() {
            forward_sigint(child);
            interrupted_at = Some(Instant::now());
        }
        if let Some(t) = interrupted_at {
            if t.elapsed() > Duration::from_secs(10) {
                let _ = child.kill();
            }
        }
        thread::sleep(poll.min(next_tick.saturating_duration_since(Instant::now())));
    }
}

/// A fresh event-file path under the temp dir.
pub fn temp_event_path() -> PathBuf {
    std::env::temp_dir().join(format!(
        "carbonledger-events-{}-{}.log",
        std::process::id(),
        crate::probe::now_ms()
    ))
}
