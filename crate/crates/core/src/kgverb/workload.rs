use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::early_stop::EarlyStopping;
use super::mask::{mask_tokens, tokenize, MaskedPair, DEFAULT_MASK_P};
use super::templates::{verbalize_all, TemplateError, TemplateTable};
use super::triples::{parse_triples, select_top, RowError, Scope, WeightedTriple};
use crate::probe::now_ms;
use crate::sampler::EpochEvent;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("event file {path} is not writable: {source}")]
    EventPathUnwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no event path: set CARBONLEDGER_EVENTS")]
    NoEventPath,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("triples: {0}")]
    Triples(#[from] RowError),
    #[error("templates: {0}")]
    Templates(#[from] TemplateError),
}

#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    pub triples: PathBuf,
    pub templates: Option<PathBuf>,
    pub top_n: usize,
    pub scope: Scope,
    pub mask_p: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss per epoch; the last value repeats once exhausted.
    /// `None` uses [`default_loss_schedule`].
    pub losses: Option<Vec<f64>>,
    /// Passes over the masked corpus per epoch.
    pub work_rounds: usize,
    pub corpus_out: Option<PathBuf>,
    pub event_path: PathBuf,
}

impl WorkloadConfig {
    pub fn new(triples: impl Into<PathBuf>, event_path: impl Into<PathBuf>) -> Self {
        WorkloadConfig {
            triples: triples.into(),
            templates: None,
            top_n: 100,
            scope: Scope::PerSubject,
            mask_p: DEFAULT_MASK_P,
            seed: 0,
            max_epochs: 50,
            patience: 3,
            losses: None,
            work_rounds: 1,
            corpus_out: None,
            event_path: event_path.into(),
        }
    }
}

/// Falls for six epochs, then flat.
pub fn default_loss_schedule(max_epochs: usize) -> Vec<f64> {
    (1..=max_epochs).map(|k| 1.0 / k.min(6) as f64).collect()
}

/// Appends protocol lines to the event file, one flush per line.
pub struct EventWriter {
    file: File,
    path: PathBuf,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self, WorkloadError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| WorkloadError::EventPathUnwritable {
                path: path.display().to_string(),
                source,
            })?;
        Ok(EventWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn emit(&mut self, event: &EpochEvent) -> Result<(), WorkloadError> {
        let line = format!("{event}\n");
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| WorkloadError::EventPathUnwritable {
                path: self.path.display().to_string(),
                source,
            })
    }
}

/// Top-`n` selection followed by verbalization; triples with unknown
/// relations are dropped.
pub fn build_corpus(
    triples: &[WeightedTriple],
    templates: &TemplateTable,
    top_n: usize,
    scope: Scope,
) -> Vec<String> {
    verbalize_all(&select_top(triples, top_n, scope), templates).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSummary {
    pub corpus_sentences: usize,
    pub masked_tokens: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_loss: f64,
    /// Fold of the per-epoch compute; identical across runs with the same inputs.
    pub checksum: u64,
}

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn epoch_compute(pairs: &[MaskedPair], epoch: usize, rounds: usize) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ epoch as u64;
    for _ in 0..rounds.max(1) {
        for p in pairs {
            h = fnv(h, p.input_text().as_bytes());
            h = fnv(h, p.target_text().as_bytes());
        }
    }
    h
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkloadError + '_ {
    move |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn run_workload(config: &WorkloadConfig) -> Result<WorkloadSummary, WorkloadError> {
    let mut events = EventWriter::create(&config.event_path)?;
    events.emit(&EpochEvent::train_start(now_ms()))?;

    let file = File::open(&config.triples).map_err(io_err(&config.triples))?;
    let parsed = parse_triples(BufReader::new(file), false)?;
    let templates = match &config.templates {
        Some(p) => TemplateTable::from_reader(BufReader::new(File::open(p).map_err(io_err(p))?))?,
        None => TemplateTable::default(),
    };
    let corpus = build_corpus(&parsed.triples, &templates, config.top_n, config.scope);
    if let Some(out) = &config.corpus_out {
        let mut text = corpus.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(out, text).map_err(io_err(out))?;
    }
    let pairs: Vec<MaskedPair> = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| {
            mask_tokens(
                &tokenize(s),
                config.mask_p,
                config.seed.wrapping_add(i as u64),
            )
        })
        .collect();
    let masked_tokens = pairs.iter().map(MaskedPair::masked_count).sum();

    let schedule = config
        .losses
        .clone()
        .unwrap_or_else(|| default_loss_schedule(config.max_epochs));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut checksum = 0u64;
    let mut epochs_run = 0;
    let mut stopped_early = false;
    for k in 1..=config.max_epochs {
        events.emit(&EpochEvent::epoch_start(k as u32, now_ms()))?;
        checksum ^= epoch_compute(&pairs, k, config.work_rounds);
        let loss = schedule
            .get(k - 1)
            .or(schedule.last())
            .copied()
            .unwrap_or(f64::INFINITY);
        events.emit(&EpochEvent::metric(k as u32, "val_loss", loss, now_ms()))?;
        events.emit(&EpochEvent::epoch_end(k as u32, now_ms()))?;
        epochs_run = k;
        if stopper.should_stop(loss) {
            stopped_early = k < config.max_epochs;
            break;
        }
    }
    events.emit(&EpochEvent::train_end(now_ms()))?;
    Ok(WorkloadSummary {
        corpus_sentences: corpus.len(),
        masked_tokens,
        epochs_run,
        stopped_early,
        best_loss: stopper.best(),
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{EventKind, EventTail};

    fn setup(dir: &Path) -> WorkloadConfig {
        let triples = dir.join("t.tsv");
        std::fs::write(
            &triples,
            "refrigerator\tAtLocation\tkitchen\t8.2\nrefrigerator\tUsedFor\tcooling_food\t4.0\nknife\tUsedFor\tcutting\t3.0\nknife\tNoTemplate\tx\t9.0\n",
        )
        .unwrap();
        WorkloadConfig::new(triples, dir.join("events"))
    }

    fn run(cfg: &WorkloadConfig) -> (WorkloadSummary, Vec<EpochEvent>) {
        let _ = std::fs::remove_file(&cfg.event_path);
        let s = run_workload(cfg).unwrap();
        let ev = EventTail::new(&cfg.event_path).drain().unwrap();
        (s, ev)
    }

    #[test]
    fn plateau_stops_after_five() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.losses = Some(vec![1.0, 0.9, 0.9, 0.9, 0.9]);
        let (s, ev) = run(&cfg);
        assert_eq!(s.epochs_run, 5);
        assert!(s.stopped_early);
        let ends = ev.iter().filter(|e| e.kind == EventKind::EpochEnd).count();
        assert_eq!(ends, 5);
        assert_eq!(ev.first().unwrap().kind, EventKind::TrainStart);
        assert_eq!(ev.last().unwrap().kind, EventKind::TrainEnd);
        assert_eq!(
            crate::sampler::protocol_violations(&ev),
            Vec::<String>::new()
        );
    }

    #[test]
    fn decreasing_runs_all_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.max_epochs = 6;
        cfg.losses = Some(vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let (s, _) = run(&cfg);
        assert_eq!(s.epochs_run, 6);
        assert!(!s.stopped_early);
    }

    #[test]
    fn default_schedule_stops_at_nine() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let (s, ev) = run(&cfg);
        assert_eq!(s.epochs_run, 9);
        let metrics = ev.iter().filter(|e| e.kind == EventKind::Metric).count();
        assert_eq!(metrics, 9);
    }

    #[test]
    fn corpus_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.corpus_out = Some(dir.path().join("corpus.txt"));
        let (a, _) = run(&cfg);
        let first = std::fs::read(dir.path().join("corpus.txt")).unwrap();
        let (b, _) = run(&cfg);
        assert_eq!(first, std::fs::read(dir.path().join("corpus.txt")).unwrap());
        assert_eq!(a.checksum, b.checksum);
        assert_eq!(a.corpus_sentences, 3);
        assert_eq!(
            String::from_utf8(first).unwrap(),
            "You are likely to find refrigerator in kitchen.\nrefrigerator is used for cooling food.\nknife is used for cutting.\n"
        );
    }

    #[test]
    fn unwritable_event_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.event_path = dir.path().join("missing").join("events");
        assert!(matches!(
            run_workload(&cfg),
            Err(WorkloadError::EventPathUnwritable { .. })
        ));
    }
}
