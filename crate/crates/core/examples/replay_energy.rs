//! Integrates a recorded power trace and splits it by phase.
//!
//! cargo run --example replay_energy [TRACE] [EVENTS]

use std::path::PathBuf;

use carbonledger::carbon::IntensityRegistry;
use carbonledger::energy::{average_power, integrate_energy, DEFAULT_PUE};
use carbonledger::probe::{open_probe, ProbeDescriptor};
use carbonledger::sampler::{run_sampler, until_train_end};
use carbonledger::tracker::summarize_phases;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut args = std::env::args().skip(1);
    let trace = args
        .next()
        .map(PathBuf::from)
        .unwrap_or(data.join("ramp_3_epochs.csv"));
    let events = args
        .next()
        .map(PathBuf::from)
        .unwrap_or(data.join("ramp_3_epochs.events"));

    let probe = open_probe(&ProbeDescriptor::replay(&trace, 2))?;
    let log = run_sampler(vec![probe], 1000, &events, until_train_end)?;
    let de = IntensityRegistry::default()
        .get("DE")
        .cloned()
        .expect("built-in");

    let total = integrate_energy(&log, DEFAULT_PUE)?;
    let avg = average_power(&log)?;
    println!(
        "{} samples over {:.3} h",
        log.samples.len(),
        avg.duration_hours
    );
    for (src, w) in &avg.per_source {
        println!("  {src}: {w:.1} W mean");
    }
    println!(
        "raw {:.4} kWh, facility {:.4} kWh at PUE {}",
        total.raw_kwh, total.facility_kwh, total.pue
    );

    let (setup, epochs) = summarize_phases(&log, DEFAULT_PUE, &de)?;
    for p in setup.iter().chain(&epochs) {
        println!(
            "  {:<8} {:.3} h  {:.4} kWh  {:.4} kg",
            p.phase_name, p.duration_hours, p.facility_kwh, p.co2e_kg
        );
    }
    for n in &total.quality_notes {
        println!("note: {n}");
    }
    Ok(())
}
