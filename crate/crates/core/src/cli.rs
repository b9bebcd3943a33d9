//! Command-line surface: `run`, `report`, `predict`, `regions`, plus the
//! `workload` demo that a `run` can wrap.
//!
//! Exit codes: 0 success, 1 child or workload failure, 2 usage or
//! configuration error. `run` passes a failing child's own exit code through.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::carbon::{
    load_intensity_registry, CarbonIntensity, EquivalenceFactors, IntensityRegistry, RegistryError,
    REGISTRY_ENV,
};
use crate::energy::DEFAULT_PUE;
use crate::forecast::{predict, Forecast, PhaseSummary};
use crate::kgverb::{run_workload, Scope, WorkloadConfig, DEFAULT_MASK_P};
use crate::ledger::{
    append_record, compare, read_ledger, render_comparison, render_report, ExperimentRecord,
    LedgerError, ReportFormat, LEDGER_ENV,
};
use crate::probe::{open_probe, Probe, ProbeDescriptor, ProbeError, ProbeKind};
use crate::sampler::{DEFAULT_INTERVAL_MS, EVENTS_ENV};
use crate::tracker::{build_record, temp_event_path, track_child, RecordSpec, RunObserver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const DEFAULT_LEDGER: &str = "carbonledger.jsonl";
pub const DEFAULT_MAX_EPOCHS: u32 = 50;

#[derive(Debug, Parser)]
#[command(
    name = "carbonledger",
    version,
    about = "Energy and CO2e accounting for compute experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wrap a workload, sample power while it runs, and append a ledger record.
    Run(RunArgs),
    /// Render ledger records.
    Report(ReportArgs),
    /// Extrapolate a whole run from per-epoch energy.
    Predict(PredictArgs),
    /// List the carbon-intensity registry.
    Regions(RegionsArgs),
    /// Built-in KG verbalization workload that speaks the event protocol.
    Workload(WorkloadArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub region: Option<String>,
    /// Override the region's intensity (gCO2e/kWh).
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub pue: Option<f64>,
    #[arg(long)]
    pub interval_ms: Option<u64>,
    /// `replay:PATH[#N]`, `stub:WATTS[#N]`, `gpu[:N]` or `cpu`. Repeatable.
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    /// Trace to replay if a hardware probe is unavailable.
    #[arg(long)]
    pub fallback_replay: Option<PathBuf>,
    /// Planned (maximum) epochs, the forecast horizon.
    #[arg(long)]
    pub max_epochs: Option<u32>,
    #[arg(long, env = LEDGER_ENV)]
    pub ledger: Option<PathBuf>,
    #[arg(long, env = EVENTS_ENV)]
    pub events: Option<PathBuf>,
    #[arg(long, env = REGISTRY_ENV)]
    pub registry: Option<PathBuf>,
    /// Flat `key = value` file; flags and env vars take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(last = true, required = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, env = LEDGER_ENV)]
    pub ledger: Option<PathBuf>,
    /// text | csv | json
    #[arg(long, default_value = "text")]
    pub format: String,
    /// Keep records whose label contains this string.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub region: Option<String>,
    /// Print deltas against this experiment id or label instead of the table.
    #[arg(long)]
    pub compare: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub epoch_kwh: f64,
    #[arg(long)]
    pub epochs: u32,
    #[arg(long)]
    pub epoch_hours: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub setup_kwh: f64,
    #[arg(long, default_value = "DE")]
    pub region: String,
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long, env = REGISTRY_ENV)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    #[arg(long, env = REGISTRY_ENV)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    #[arg(long, default_value = "per-subject")]
    pub scope: Scope,
    #[arg(long, default_value_t = DEFAULT_MASK_P)]
    pub mask_p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    /// Comma-separated validation losses, one per epoch.
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub work_rounds: usize,
    #[arg(long)]
    pub corpus_out: Option<PathBuf>,
    #[arg(long, env = EVENTS_ENV)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Ledger(LedgerError::Io { .. }) => EXIT_FAILURE,
            _ => EXIT_USAGE,
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Report(a) => cmd_report(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Regions(a) => cmd_regions(&a, out),
        Command::Workload(a) => cmd_workload(&a, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Flat `key = value` config; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value", i + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Parses a `--probe` value.
pub fn parse_probe_spec(spec: &str) -> Result<ProbeDescriptor, CliError> {
    let bad = || CliError::Usage(format!("bad probe spec {spec:?}"));
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    let with_count = |a: &str| -> Result<(String, u32), CliError> {
        match a.rsplit_once('#') {
            Some((body, n)) => Ok((body.to_string(), n.parse().map_err(|_| bad())?)),
            None => Ok((a.to_string(), 1)),
        }
    };
    match (kind, arg) {
        ("replay", Some(a)) => {
            let (path, n) = with_count(a)?;
            Ok(ProbeDescriptor::replay(path, n))
        }
        ("stub", Some(a)) => {
            let (w, n) = with_count(a)?;
            Ok(ProbeDescriptor::synthetic(w.parse().map_err(|_| bad())?, n))
        }
        ("gpu", None) => Ok(ProbeDescriptor::gpu(1)),
        ("gpu", Some(n)) => Ok(ProbeDescriptor::gpu(n.parse().map_err(|_| bad())?)),
        ("cpu", None) => Ok(ProbeDescriptor::cpu()),
        _ => Err(bad()),
    }
}

fn load_registry(path: Option<&Path>) -> Result<IntensityRegistry, CliError> {
    match path {
        Some(p) => Ok(load_intensity_registry(p)?),
        None => Ok(IntensityRegistry::default()),
    }
}

fn resolve_intensity(
    registry: &IntensityRegistry,
    region: &str,
    override_g: Option<f64>,
) -> Result<CarbonIntensity, CliError> {
    if let Some(g) = override_g {
        if !(g.is_finite() && g > 0.0) {
            return Err(CliError::Usage(format!(
                "intensity must be positive, got {g}"
            )));
        }
        let mut c = CarbonIntensity::custom(g);
        c.region = region.to_string();
        return Ok(c);
    }
    registry
        .get(region)
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("region {region:?} not in intensity registry")))
}

/// Resolved settings for one `run`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub label: String,
    pub region: String,
    pub intensity: CarbonIntensity,
    pub pue: f64,
    pub interval_ms: u64,
    pub probes: Vec<ProbeDescriptor>,
    pub fallback_replay: Option<PathBuf>,
    pub max_epochs: u32,
    pub ledger: PathBuf,
    pub events: Option<PathBuf>,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("bad value for {key}: {v:?}")))
}

impl RunConfig {
    /// Flags (already merged with env vars by clap) over the config file
    /// over built-in defaults.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => parse_config_file(
                &fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?,
            )?,
            None => BTreeMap::new(),
        };
        let get = |k: &str| file.get(k).map(String::as_str);

        let label = args
            .label
            .clone()
            .or(get("label").map(str::to_string))
            .unwrap_or_else(|| "experiment".into());
        let region = args
            .region
            .clone()
            .or(get("region").map(str::to_string))
            .unwrap_or_else(|| "DE".into());
        let intensity_g = match args.intensity {
            Some(g) => Some(g),
            None => get("intensity")
                .map(|v| parse_value("intensity", v))
                .transpose()?,
        };
        let pue = match args.pue {
            Some(p) => p,
            None => get("pue")
                .map(|v| parse_value("pue", v))
                .transpose()?
                .unwrap_or(DEFAULT_PUE),
        };
        if !(pue.is_finite() && pue >= 1.0) {
            return Err(CliError::Usage(format!("PUE must be >= 1, got {pue}")));
        }
        let interval_ms = match args.interval_ms {
            Some(i) => i,
            None => get("interval_ms")
                .map(|v| parse_value("interval_ms", v))
                .transpose()?
                .unwrap_or(DEFAULT_INTERVAL_MS),
        };
        if interval_ms == 0 {
            return Err(CliError::Usage("interval_ms must be positive".into()));
        }
        let max_epochs = match args.max_epochs {
            Some(n) => n,
            None => get("max_epochs")
                .map(|v| parse_value("max_epochs", v))
                .transpose()?
                .unwrap_or(DEFAULT_MAX_EPOCHS),
        };
        let specs: Vec<String> = if !args.probes.is_empty() {
            args.probes.clone()
        } else if let Some(p) = get("probe") {
            p.split(',').map(|s| s.trim().to_string()).collect()
        } else {
            Vec::new()
        };
        if specs.is_empty() {
            return Err(CliError::Usage("at least one --probe is required".into()));
        }
        let mut probes = Vec::new();
        let mut seen: BTreeMap<ProbeKind, usize> = BTreeMap::new();
        for s in &specs {
            let d = parse_probe_spec(s)?;
            let n = seen.entry(d.kind).or_default();
            let d = if *n == 0 {
                d
            } else {
                let id = format!("{}{}.", d.source_id, n);
                d.with_source_id(id)
            };
            *n += 1;
            probes.push(d);
        }
        let registry_path = args.registry.clone().or(get("registry").map(PathBuf::from));
        let registry = load_registry(registry_path.as_deref())?;
        let intensity = resolve_intensity(&registry, &region, intensity_g)?;
        Ok(RunConfig {
            label,
            region,
            intensity,
            pue,
            interval_ms,
            probes,
            fallback_replay: args
                .fallback_replay
                .clone()
                .or(get("fallback_replay").map(PathBuf::from)),
            max_epochs,
            ledger: args
                .ledger
                .clone()
                .or(get("ledger").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_LEDGER)),
            events: args.events.clone().or(get("events").map(PathBuf::from)),
        })
    }

    fn open_probes(&self, err: &mut dyn Write) -> Result<Vec<Box<dyn Probe>>, CliError> {
        let mut out = Vec::new();
        for d in &self.probes {
            match open_probe(d) {
                Ok(p) => out.push(p),
                Err(ProbeError::BackendUnavailable(why)) => {
                    let Some(trace) = &self.fallback_replay else {
                        return Err(CliError::Usage(format!(
                            "probe {}: backend unavailable ({why}); pass --fallback-replay to use a trace",
                            d.kind
                        )));
                    };
                    let _ = writeln!(
                        err,
                        "probe {}: {why}; replaying {}",
                        d.kind,
                        trace.display()
                    );
                    let fb = ProbeDescriptor::replay(trace, d.device_count)
                        .with_source_id(d.source_id.clone());
                    out.push(open_probe(&fb)?);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}

struct PrintForecast<'a> {
    err: &'a mut dyn Write,
    factors: EquivalenceFactors,
}

impl RunObserver for PrintForecast<'_> {
    fn on_forecast(&mut self, f: &Forecast) {
        let _ = writeln!(
            self.err,
            "forecast after {} epoch(s) for {} planned: {:.3} h, {:.3} kWh, {:.3} kg CO2e ({:.2} km by car)",
            f.basis_epochs,
            f.planned_epochs,
            f.predicted_duration_hours,
            f.predicted_kwh,
            f.predicted_co2e_kg,
            self.factors.car_km(f.predicted_co2e_kg)
        );
    }
}

fn print_run_summary(out: &mut dyn Write, r: &ExperimentRecord) -> std::io::Result<()> {
    write!(
        out,
        "{}",
        render_report(std::slice::from_ref(r), ReportFormat::TextTable).expect("one record")
    )?;
    writeln!(
        out,
        "epochs completed: {}  status: {:?}  intensity: {} g/kWh ({})  PUE: {}",
        r.epochs_completed, r.status, r.intensity_g_per_kwh, r.region, r.pue
    )?;
    if let Some(f) = &r.forecast {
        writeln!(
            out,
            "first-epoch forecast ({} planned epochs): {:.3} kWh, {:.3} kg; measured: {:.3} kWh, {:.3} kg",
            f.planned_epochs, f.predicted_kwh, f.predicted_co2e_kg, r.energy_kwh, r.co2e_kg
        )?;
    }
    for n in &r.quality_notes {
        writeln!(out, "note: {n}")?;
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = RunConfig::resolve(args)?;
    let probes = cfg.open_probes(err)?;
    let (event_path, temp) = match &cfg.events {
        Some(p) => (p.clone(), false),
        None => (temp_event_path(), true),
    };
    fs::write(&event_path, b"")
        .map_err(|e| CliError::Usage(format!("event file {}: {e}", event_path.display())))?;
    let started_at = Utc::now();
    let factors = EquivalenceFactors::default();
    let mut observer = PrintForecast { err, factors };
    let tracked = track_child(
        &args.command,
        probes,
        cfg.interval_ms,
        &event_path,
        cfg.pue,
        &cfg.intensity,
        cfg.max_epochs,
        &mut observer,
    );
    if temp {
        let _ = fs::remove_file(&event_path);
    }
    let tracked = tracked.map_err(|e| CliError::Failure(e.to_string()))?;
    let spec = RecordSpec {
        experiment_id: format!(
            "{}-{}-{}",
            cfg.label,
            started_at.format("%Y%m%dT%H%M%S%.3fZ"),
            std::process::id()
        ),
        label: cfg.label.clone(),
        started_at,
        region: cfg.region.clone(),
        intensity: cfg.intensity.clone(),
        pue: cfg.pue,
        factors,
        planned_epochs: cfg.max_epochs,
    };
    let record = build_record(&tracked.log, &spec, tracked.status, tracked.exit_code)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    append_record(&cfg.ledger, &record)?;
    print_run_summary(out, &record).map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(match tracked.exit_code {
        Some(0) if tracked.status == crate::ledger::RunStatus::Completed => EXIT_OK,
        Some(0) | None => EXIT_FAILURE,
        Some(c) => c,
    })
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let format: ReportFormat = args.format.parse().map_err(CliError::Usage)?;
    let path = args
        .ledger
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_LEDGER));
    let records: Vec<ExperimentRecord> = read_ledger(&path)?
        .into_iter()
        .filter(|r| {
            args.label
                .as_ref()
                .is_none_or(|l| r.label.contains(l.as_str()))
        })
        .filter(|r| args.id.as_ref().is_none_or(|i| &r.experiment_id == i))
        .filter(|r| args.region.as_ref().is_none_or(|g| &r.region == g))
        .collect();
    if records.is_empty() {
        return Err(LedgerError::EmptySelection.into());
    }
    let doc = match &args.compare {
        Some(base) => render_comparison(&compare(&records, base)?, base),
        None => render_report(&records, format)?,
    };
    match &args.out {
        Some(p) => {
            fs::write(p, doc).map_err(|e| CliError::Failure(format!("{}: {e}", p.display())))?
        }
        None => out
            .write_all(doc.as_bytes())
            .map_err(|e| CliError::Failure(e.to_string()))?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !(args.epoch_kwh.is_finite() && args.epoch_kwh > 0.0)
        || args.epochs == 0
        || args.setup_kwh < 0.0
    {
        return Err(CliError::Usage(
            "--epoch-kwh and --epochs must be positive, --setup-kwh non-negative".into(),
        ));
    }
    let registry = load_registry(args.registry.as_deref())?;
    let intensity = resolve_intensity(&registry, &args.region, args.intensity)?;
    let epoch = PhaseSummary::epoch(
        1,
        args.epoch_hours.unwrap_or(0.0),
        args.epoch_kwh,
        &intensity,
    );
    let setup =
        (args.setup_kwh > 0.0).then(|| PhaseSummary::setup(0.0, args.setup_kwh, &intensity));
    let f = predict(&[epoch], setup.as_ref(), args.epochs, &intensity)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let factors = EquivalenceFactors::default();
    let w = |e: std::io::Error| CliError::Failure(e.to_string());
    writeln!(out, "planned epochs: {}", f.planned_epochs).map_err(w)?;
    writeln!(
        out,
        "intensity: {} g/kWh ({})",
        intensity.grams_per_kwh, intensity.region
    )
    .map_err(w)?;
    if args.epoch_hours.is_some() {
        writeln!(out, "predicted time: {:.3} h", f.predicted_duration_hours).map_err(w)?;
    }
    writeln!(out, "predicted energy: {:.2} kWh", f.predicted_kwh).map_err(w)?;
    writeln!(out, "predicted CO2e: {:.3} kg", f.predicted_co2e_kg).map_err(w)?;
    writeln!(
        out,
        "car equivalent: {:.2} km",
        factors.car_km(f.predicted_co2e_kg)
    )
    .map_err(w)?;
    Ok(EXIT_OK)
}

pub fn cmd_regions(args: &RegionsArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let registry = load_registry(args.registry.as_deref())?;
    for c in registry.iter() {
        writeln!(
            out,
            "{} {} {} {}",
            c.region, c.grams_per_kwh, c.source, c.as_of
        )
        .map_err(|e| CliError::Failure(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_workload(args: &WorkloadArgs, err: &mut dyn Write) -> Result<i32, CliError> {
    let events = args.events.clone().ok_or_else(|| {
        CliError::Usage(format!("no event path: pass --events or set {EVENTS_ENV}"))
    })?;
    if !(args.mask_p > 0.0 && args.mask_p < 1.0) {
        return Err(CliError::Usage(format!(
            "--mask-p must be in (0, 1), got {}",
            args.mask_p
        )));
    }
    if args.top_n == 0 || args.max_epochs == 0 {
        return Err(CliError::Usage(
            "--top-n and --max-epochs must be positive".into(),
        ));
    }
    let mut cfg = WorkloadConfig::new(&args.triples, events);
    cfg.templates = args.templates.clone();
    cfg.top_n = args.top_n;
    cfg.scope = args.scope;
    cfg.mask_p = args.mask_p;
    cfg.seed = args.seed;
    cfg.max_epochs = args.max_epochs;
    cfg.patience = args.patience;
    cfg.losses = args.losses.clone();
    cfg.work_rounds = args.work_rounds;
    cfg.corpus_out = args.corpus_out.clone();
    let s = run_workload(&cfg).map_err(|e| CliError::Failure(e.to_string()))?;
    let _ = writeln!(
        err,
        "workload: {} sentences, {} masked tokens, {} epochs{} (best val_loss {})",
        s.corpus_sentences,
        s.masked_tokens,
        s.epochs_run,
        if s.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        s.best_loss
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["carbonledger"];
        full.extend_from_slice(args);
        let code = run_cli(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn probe_specs() {
        assert_eq!(
            parse_probe_spec("replay:a/b.csv#2").unwrap(),
            ProbeDescriptor::replay("a/b.csv", 2)
        );
        assert_eq!(
            parse_probe_spec("replay:t.csv").unwrap(),
            ProbeDescriptor::replay("t.csv", 1)
        );
        assert_eq!(parse_probe_spec("gpu:2").unwrap(), ProbeDescriptor::gpu(2));
        assert_eq!(parse_probe_spec("cpu").unwrap(), ProbeDescriptor::cpu());
        assert_eq!(
            parse_probe_spec("stub:256.6").unwrap(),
            ProbeDescriptor::synthetic(256.6, 1)
        );
        assert!(parse_probe_spec("replay").is_err());
        assert!(parse_probe_spec("tpu:1").is_err());
        assert!(parse_probe_spec("gpu:two").is_err());
    }

    #[test]
    fn config_file() {
        let m = parse_config_file("# c\nlabel = demo\npue=1.2\n\n").unwrap();
        assert_eq!(m["label"], "demo");
        assert_eq!(m["pue"], "1.2");
        assert!(parse_config_file("novalue\n").is_err());
    }

    #[test]
    fn predict_examples() {
        let (code, out, _) = run(&[
            "predict",
            "--epoch-kwh",
            "0.27",
            "--epochs",
            "13",
            "--region",
            "DE",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("predicted energy: 3.51 kWh"), "{out}");
        assert!(out.contains("predicted CO2e: 1.334 kg"), "{out}");

        let (_, out, _) = run(&["predict", "--epoch-kwh", "0.27", "--epochs", "1"]);
        assert!(out.contains("predicted energy: 0.27 kWh"), "{out}");

        let (_, out, _) = run(&[
            "predict",
            "--epoch-kwh",
            "0.27",
            "--epochs",
            "13",
            "--intensity",
            "294.6",
        ]);
        assert!(out.contains("predicted CO2e: 1.034 kg"), "{out}");
    }

    #[test]
    fn predict_bad_arguments() {
        assert_eq!(run(&["predict", "--epoch-kwh", "-1", "--epochs", "3"]).0, 2);
        assert_eq!(run(&["predict", "--epoch-kwh", "1", "--epochs", "0"]).0, 2);
        assert_eq!(
            run(&[
                "predict",
                "--epoch-kwh",
                "1",
                "--epochs",
                "3",
                "--region",
                "XX"
            ])
            .0,
            2
        );
        assert_eq!(run(&["predict"]).0, 2);
    }

    #[test]
    fn regions_listing() {
        let (code, out, _) = run(&["regions"]);
        assert_eq!(code, 0);
        assert!(out.contains("DE 380"), "{out}");

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        fs::write(&p, "SE,45,x,2023-01-01\nAT,120,y,2023-01-01\n").unwrap();
        let (_, out, _) = run(&["regions", "--registry", p.to_str().unwrap()]);
        let codes: Vec<&str> = out.lines().map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(codes, vec!["AT", "DE", "SE"]);

        fs::write(&p, "SE,45,x,2023-01-01\nAT;120\n").unwrap();
        let (code, _, err) = run(&["regions", "--registry", p.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn report_empty_selection_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("l.jsonl");
        let r = ExperimentRecord::new(
            "a",
            "demo",
            Utc::now(),
            1.0,
            1,
            1.0,
            "DE",
            380.0,
            1.55,
            &EquivalenceFactors::default(),
        );
        append_record(&ledger, &r).unwrap();
        let l = ledger.to_str().unwrap();
        let (code, out, _) = run(&["report", "--ledger", l]);
        assert_eq!(code, 0);
        assert!(out.starts_with("Experiment"));
        let (code, _, err) = run(&["report", "--ledger", l, "--label", "nothing-like-this"]);
        assert_eq!(code, 2);
        assert!(err.contains("no records"), "{err}");
        let (code, out, _) = run(&["report", "--ledger", l, "--format", "csv"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("experiment_id,"));
        assert_eq!(run(&["report", "--ledger", l, "--format", "xml"]).0, 2);
    }

    #[test]
    fn run_requires_probe_and_valid_pue() {
        let (code, _, err) = run(&["run", "--", "true"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _) = run(&["run", "--probe", "stub:1", "--pue", "0.8", "--", "true"]);
        assert_eq!(code, 2);
        let (code, _, _) = run(&["run", "--probe", "stub:1", "--region", "XX", "--", "true"]);
        assert_eq!(code, 2);
    }

    #[cfg(not(feature = "hardware"))]
    #[test]
    fn missing_hardware_without_fallback_is_config_error() {
        let (code, _, err) = run(&["run", "--probe", "gpu:2", "--", "true"]);
        assert_eq!(code, 2);
        assert!(err.contains("--fallback-replay"), "{err}");
    }

    #[test]
    fn duplicate_kinds_get_distinct_ids() {
        let args = RunArgs {
            label: None,
            region: None,
            intensity: None,
            pue: None,
            interval_ms: None,
            probes: vec!["stub:1".into(), "stub:2".into()],
            fallback_replay: None,
            max_epochs: None,
            ledger: None,
            events: None,
            registry: None,
            config: None,
            command: vec!["true".into()],
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.probes[0].source_ids(), vec!["stub0"]);
        assert_eq!(cfg.probes[1].source_ids(), vec!["stub1.0"]);
        assert_eq!(cfg.pue, 1.55);
        assert_eq!(cfg.max_epochs, 50);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(
            &p,
            "label = from-file\npue = 1.2\nprobe = stub:5\ninterval_ms = 250\n",
        )
        .unwrap();
        let args = RunArgs {
            label: Some("from-flag".into()),
            region: None,
            intensity: None,
            pue: None,
            interval_ms: None,
            probes: vec![],
            fallback_replay: None,
            max_epochs: None,
            ledger: None,
            events: None,
            registry: None,
            config: Some(p),
            command: vec!["true".into()],
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.label, "from-flag");
        assert_eq!(cfg.pue, 1.2);
        assert_eq!(cfg.interval_ms, 250);
        assert_eq!(cfg.probes, vec![ProbeDescriptor::synthetic(5.0, 1)]);
    }
}
