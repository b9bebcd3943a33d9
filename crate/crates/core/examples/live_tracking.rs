//! Wraps a shell script that speaks the event protocol, with a synthetic
//! 250 W probe standing in for two GPUs.

use carbonledger::carbon::{CarbonIntensity, EquivalenceFactors};
use carbonledger::forecast::Forecast;
use carbonledger::probe::{open_probe, ProbeDescriptor};
use carbonledger::tracker::{build_record, temp_event_path, track_child, RecordSpec, RunObserver};

struct Print;

impl RunObserver for Print {
    fn on_forecast(&mut self, f: &Forecast) {
        println!(
            "forecast after {}: {:.6} kWh for {} epochs",
            f.basis_epochs, f.predicted_kwh, f.planned_epochs
        );
    }
}

const SCRIPT: &str = r#"
ms() { date +%s%3N; }
echo "TRAIN_START $(ms)" >> "$CARBONLEDGER_EVENTS"
for k in 1 2 3; do
  echo "EPOCH_START $k $(ms)" >> "$CARBONLEDGER_EVENTS"
  sleep 0.3
  echo "METRIC $k val_loss 0.$((9 - k)) $(ms)" >> "$CARBONLEDGER_EVENTS"
  echo "EPOCH_END $k $(ms)" >> "$CARBONLEDGER_EVENTS"
done
echo "TRAIN_END $(ms)" >> "$CARBONLEDGER_EVENTS"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let de = CarbonIntensity::custom(380.0);
    let probe = open_probe(&ProbeDescriptor::synthetic(250.0, 2))?;
    let events = temp_event_path();
    let run = track_child(
        &["sh".into(), "-c".into(), SCRIPT.into()],
        vec![probe],
        50,
        &events,
        1.55,
        &de,
        3,
        &mut Print,
    )?;
    let _ = std::fs::remove_file(&events);
    let spec = RecordSpec {
        experiment_id: "live-demo".into(),
        label: "live".into(),
        started_at: chrono::Utc::now(),
        region: "DE".into(),
        intensity: de,
        pue: 1.55,
        factors: EquivalenceFactors::default(),
        planned_epochs: 3,
    };
    let r = build_record(&run.log, &spec, run.status, run.exit_code)?;
    println!(
        "{:?}, {} epochs, {:.4} h, {:.6} kWh, {:.6} kg",
        r.status, r.epochs_completed, r.duration_hours, r.energy_kwh, r.co2e_kg
    );
    for n in &r.quality_notes {
        println!("note: {n}");
    }
    Ok(())
}
