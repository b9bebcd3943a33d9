//! Live power backends. Only compiled with the `hardware` feature.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use crate::probe::{monotonic_stamp, now_ms, Pacing, PowerSample, Probe, ProbeError, Reading};

/// Polls `nvidia-smi` for per-device `power.draw`.
#[derive(Debug)]
pub struct SmiProbe {
    sources: Vec<String>,
    skipped: usize,
    last_ts: Option<i64>,
}

impl SmiProbe {
    pub fn open(sources: Vec<String>) -> Result<Self, ProbeError> {
        let found = query_smi().map_err(ProbeError::BackendUnavailable)?;
        if found.len() < sources.len() {
            return Err(ProbeError::BackendUnavailable(format!(
                "requested {} GPUs, nvidia-smi reports {}",
                sources.len(),
                found.len()
            )));
        }
        Ok(SmiProbe {
            sources,
            skipped: 0,
            last_ts: None,
        })
    }
}

fn query_smi() -> Result<Vec<Option<f64>>, String> {
    let out = Command::new("nvidia-smi")
        .args(["--query-gpu=power.draw", "--format=csv,noheader,nounits"])
        .output()
        .map_err(|e| format!("nvidia-smi: {e}"))?;
    if !out.status.success() {
        return Err(format!("nvidia-smi exited with {}", out.status));
    }
    Ok(String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| l.trim().parse::<f64>().ok().filter(|w| *w >= 0.0))
        .collect())
}

impl Probe for SmiProbe {
    fn sources(&self) -> &[String] {
        &self.sources
    }

    fn pacing(&self) -> Pacing {
        Pacing::Live
    }

    fn read(&mut self) -> Reading {
        let ts = monotonic_stamp(&mut self.last_ts, now_ms());
        let readings = match query_smi() {
            Ok(r) => r,
            Err(_) => {
                self.skipped += self.sources.len();
                return Reading::Samples(Vec::new());
            }
        };
        let mut out = Vec::with_capacity(self.sources.len());
        for (i, src) in self.sources.iter().enumerate() {
            match readings.get(i).copied().flatten() {
                Some(w) => out.push(PowerSample::new(src.clone(), ts, w)),
                None => self.skipped += 1,
            }
        }
        Reading::Samples(out)
    }

    fn skipped_reads(&self) -> usize {
        self.skipped
    }
}

const POWERCAP_ROOT: &str = "/sys/class/powercap/intel-rapl:0";

/// Package energy counter from the Linux powercap interface; watts are the
/// counter delta over the wall-clock delta between reads.
#[derive(Debug)]
pub struct PowercapProbe {
    sources: Vec<String>,
    energy_path: PathBuf,
    max_uj: u64,
    last: Option<(i64, u64)>,
    skipped: usize,
    last_ts: Option<i64>,
}

impl PowercapProbe {
    pub fn open(sources: Vec<String>) -> Result<Self, ProbeError> {
        let root = PathBuf::from(POWERCAP_ROOT);
        let energy_path = root.join("energy_uj");
        let max_uj = read_u64(&root.join("max_energy_range_uj"))
            .map_err(|e| ProbeError::BackendUnavailable(format!("powercap: {e}")))?;
        let start = read_u64(&energy_path)
            .map_err(|e| ProbeError::BackendUnavailable(format!("powercap: {e}")))?;
        let mut last_ts = None;
        let t0 = monotonic_stamp(&mut last_ts, now_ms());
        Ok(PowercapProbe {
            sources,
            energy_path,
            max_uj,
            last: Some((t0, start)),
            skipped: 0,
            last_ts,
        })
    }
}

fn read_u64(path: &std::path::Path) -> Result<u64, String> {
    fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .trim()
        .parse()
        .map_err(|e| format!("{}: {e}", path.display()))
}

impl Probe for PowercapProbe {
    fn sources(&self) -> &[String] {
        &self.sources
    }

    fn pacing(&self) -> Pacing {
        Pacing::Live
    }

    fn read(&mut self) -> Reading {
        let ts = monotonic_stamp(&mut self.last_ts, now_ms());
        let uj = match read_u64(&self.energy_path) {
            Ok(v) => v,
            Err(_) => {
                self.skipped += self.sources.len();
                return Reading::Samples(Vec::new());
            }
        };
        let Some((t_prev, uj_prev)) = self.last.replace((ts, uj)) else {
            return Reading::Samples(Vec::new());
        };
        // counter wraps at max_energy_range_uj
        let delta = if uj >= uj_prev {
            uj - uj_prev
        } else {
            uj + (self.max_uj - uj_prev)
        };
        let dt_s = (ts - t_prev) as f64 / 1000.0;
        let watts = delta as f64 / 1e6 / dt_s;
        Reading::Samples(
            self.sources
                .iter()
                .map(|s| PowerSample::new(s.clone(), ts, watts))
                .collect(),
        )
    }

    fn skipped_reads(&self) -> usize {
        self.skipped
    }
}
