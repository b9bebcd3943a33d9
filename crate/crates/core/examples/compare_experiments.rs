//! Appends runs to a JSONL ledger, reads them back and compares to a baseline.

use carbonledger::carbon::EquivalenceFactors;
use carbonledger::ledger::{
    append_record, compare, read_ledger, render_comparison, render_report, ExperimentRecord,
    ReportFormat,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("ledger.jsonl");
    let f = EquivalenceFactors::default();
    for (i, (label, h, kwh)) in [
        ("T5s FT", 1.981, 1.52),
        ("T5s IK", 4.438, 3.53),
        ("T5s IK+FT", 6.612, 5.19),
    ]
    .into_iter()
    .enumerate()
    {
        let r = ExperimentRecord::new(
            format!("e{i}"),
            label,
            chrono::Utc::now(),
            h,
            1,
            kwh,
            "DE",
            380.0,
            1.55,
            &f,
        );
        let pos = append_record(&path, &r)?;
        println!("appended {} at line {}", r.experiment_id, pos.index + 1);
    }
    let recs = read_ledger(&path)?;
    print!("{}", render_report(&recs, ReportFormat::TextTable)?);
    println!();
    print!(
        "{}",
        render_comparison(&compare(&recs, "T5s FT")?, "T5s FT")
    );
    Ok(())
}
