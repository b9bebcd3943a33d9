//! Predicts a whole run from its first epoch, then refines as epochs finish.

use carbonledger::carbon::{car_km_equivalent, IntensityRegistry};
use carbonledger::forecast::{predict, refine, PhaseSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let de = IntensityRegistry::default()
        .get("DE")
        .cloned()
        .expect("built-in");
    let planned = 13;
    let measured = [0.27, 0.28, 0.27, 0.29, 0.30];
    let setup = PhaseSummary::setup(0.05, 0.02, &de);

    let first = PhaseSummary::epoch(1, 0.35, measured[0], &de);
    let mut f = predict(&[first], Some(&setup), planned, &de)?;
    println!(
        "after 1 epoch: {:.3} kWh, {:.3} kg CO2e, {:.1} km by car, {:.2} h",
        f.predicted_kwh,
        f.predicted_co2e_kg,
        car_km_equivalent(f.predicted_co2e_kg),
        f.predicted_duration_hours
    );
    for (i, &kwh) in measured.iter().enumerate().skip(1) {
        f = refine(&f, &PhaseSummary::epoch(i as u32 + 1, 0.35, kwh, &de))?;
        println!(
            "after {} epochs: {:.3} kWh, {:.3} kg",
            f.basis_epochs, f.predicted_kwh, f.predicted_co2e_kg
        );
    }
    Ok(())
}
