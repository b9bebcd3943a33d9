//! Renders the six fine-tuning runs as a report in each output format.
//!
//! The published CO2e column implies about 294.6 g/kWh rather than the
//! 380 g/kWh DE default, so both are shown.

use carbonledger::carbon::EquivalenceFactors;
use carbonledger::ledger::{render_report, ExperimentRecord, ReportFormat};

const RUNS: [(&str, f64, f64); 6] = [
    ("T5s IK", 4.438, 3.53),
    ("T5b IK", 13.969, 10.72),
    ("T5s FT", 1.981, 1.52),
    ("T5s IK+FT", 6.612, 5.19),
    ("T5b FT", 3.793, 2.74),
    ("T5b IK+FT", 17.718, 13.42),
];

fn records(grams: f64) -> Vec<ExperimentRecord> {
    let f = EquivalenceFactors::default();
    RUNS.iter()
        .enumerate()
        .map(|(i, &(label, h, kwh))| {
            ExperimentRecord::new(
                format!("run{i}"),
                label,
                chrono::Utc::now(),
                h,
                1,
                kwh,
                "DE",
                grams,
                1.55,
                &f,
            )
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "at 294.6 g/kWh:\n{}",
        render_report(&records(294.6), ReportFormat::TextTable)?
    );
    println!(
        "at 380 g/kWh:\n{}",
        render_report(&records(380.0), ReportFormat::TextTable)?
    );
    print!(
        "{}",
        render_report(&records(294.6)[..2], ReportFormat::Csv)?
    );
    Ok(())
}
