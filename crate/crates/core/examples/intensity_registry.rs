//! Loads a region registry and converts one run's energy per region.
//!
//! cargo run --example intensity_registry [REGISTRY.csv] [KWH]

use std::path::PathBuf;

use carbonledger::carbon::{load_intensity_registry, EmissionsReport, EquivalenceFactors};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/registry.csv"));
    let kwh: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(13.42);

    let reg = load_intensity_registry(&path)?;
    let f = EquivalenceFactors::default();
    println!("{kwh} kWh:");
    for c in reg.iter() {
        let r = EmissionsReport::new(kwh, c, &f);
        println!(
            "  {:<9} {:>6} g/kWh  {:>8.3} kg  {:>7.2} km  {:.5} flights  ({}, {})",
            c.region, c.grams_per_kwh, r.co2e_kg, r.car_km, r.round_flights, c.source, c.as_of
        );
    }
    Ok(())
}
