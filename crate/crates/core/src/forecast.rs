//! Whole-run prediction from the first completed epoch(s).
//!
//! Linear: `setup + planned_epochs × mean(per-epoch)`, for both duration and
//! energy. CO2e is always recomputed from the predicted energy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{co2e, CarbonIntensity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase_name: String,
    /// Set for epoch phases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_index: Option<u32>,
    pub duration_hours: f64,
    pub facility_kwh: f64,
    pub co2e_kg: f64,
}

impl PhaseSummary {
    pub fn epoch(
        k: u32,
        duration_hours: f64,
        facility_kwh: f64,
        intensity: &CarbonIntensity,
    ) -> Self {
        PhaseSummary {
            phase_name: format!("epoch {k}"),
            epoch_index: Some(k),
            duration_hours,
            facility_kwh,
            co2e_kg: co2e(facility_kwh, intensity),
        }
    }

    pub fn setup(duration_hours: f64, facility_kwh: f64, intensity: &CarbonIntensity) -> Self {
        PhaseSummary {
            phase_name: "setup".into(),
            epoch_index: None,
            duration_hours,
            facility_kwh,
            co2e_kg: co2e(facility_kwh, intensity),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("at least one completed epoch is required")]
    NoCompletedEpochs,
    #[error("planned epochs ({planned}) fewer than completed ({completed})")]
    PlannedBelowCompleted { planned: u32, completed: u32 },
    #[error("epoch {got} does not follow epoch {last}")]
    EpochIndexRegression { last: u32, got: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub basis_epochs: u32,
    pub planned_epochs: u32,
    pub predicted_duration_hours: f64,
    pub predicted_kwh: f64,
    pub predicted_co2e_kg: f64,
    pub includes_setup: bool,
    // running state for refinement
    last_epoch: u32,
    epoch_hours_sum: f64,
    epoch_kwh_sum: f64,
    setup_hours: f64,
    setup_kwh: f64,
    intensity_g_per_kwh: f64,
}

impl Forecast {
    fn recompute(&mut self) {
        let n = self.planned_epochs as f64;
        let k = self.basis_epochs as f64;
        self.predicted_duration_hours = self.setup_hours + n * (self.epoch_hours_sum / k);
        self.predicted_kwh = self.setup_kwh + n * (self.epoch_kwh_sum / k);
        self.predicted_co2e_kg =
            crate::carbon::co2e_at(self.predicted_kwh, self.intensity_g_per_kwh);
    }

    pub fn intensity_g_per_kwh(&self) -> f64 {
        self.intensity_g_per_kwh
    }

    /// Mean energy of the completed epochs.
    pub fn per_epoch_kwh(&self) -> f64 {
        self.epoch_kwh_sum / self.basis_epochs as f64
    }
}

pub fn predict(
    completed: &[PhaseSummary],
    setup: Option<&PhaseSummary>,
    planned_epochs: u32,
    intensity: &CarbonIntensity,
) -> Result<Forecast, ForecastError> {
    let k = completed.len() as u32;
    if k == 0 {
        return Err(ForecastError::NoCompletedEpochs);
    }
    if planned_epochs < k {
        return Err(ForecastError::PlannedBelowCompleted {
            planned: planned_epochs,
            completed: k,
        });
    }
    let mut last = 0;
    for (i, p) in completed.iter().enumerate() {
        let idx = p.epoch_index.unwrap_or(i as u32 + 1);
        if idx <= last {
            return Err(ForecastError::EpochIndexRegression { last, got: idx });
        }
        last = idx;
    }
    let mut f = Forecast {
        basis_epochs: k,
        planned_epochs,
        predicted_duration_hours: 0.0,
        predicted_kwh: 0.0,
        predicted_co2e_kg: 0.0,
        includes_setup: setup.is_some(),
        last_epoch: last,
        epoch_hours_sum: completed.iter().map(|p| p.duration_hours).sum(),
        epoch_kwh_sum: completed.iter().map(|p| p.facility_kwh).sum(),
        setup_hours: setup.map_or(0.0, |s| s.duration_hours),
        setup_kwh: setup.map_or(0.0, |s| s.facility_kwh),
        intensity_g_per_kwh: intensity.grams_per_kwh,
    };
    f.recompute();
    Ok(f)
}

/// Folds one more completed epoch into the basis.
pub fn refine(forecast: &Forecast, epoch: &PhaseSummary) -> Result<Forecast, ForecastError> {
    let idx = epoch.epoch_index.unwrap_or(forecast.last_epoch + 1);
    if idx <= forecast.last_epoch {
        return Err(ForecastError::EpochIndexRegression {
            last: forecast.last_epoch,
            got: idx,
        });
    }
    let mut f = forecast.clone();
    f.basis_epochs += 1;
    f.last_epoch = idx;
    f.planned_epochs = f.planned_epochs.max(f.basis_epochs);
    f.epoch_hours_sum += epoch.duration_hours;
    f.epoch_kwh_sum += epoch.facility_kwh;
    f.recompute();
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn de() -> CarbonIntensity {
        CarbonIntensity::custom(380.0)
    }

    fn epochs(kwh: &[f64]) -> Vec<PhaseSummary> {
        kwh.iter()
            .enumerate()
            .map(|(i, &e)| PhaseSummary::epoch(i as u32 + 1, 0.5, e, &de()))
            .collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn one_epoch_thirteen_planned() {
        let f = predict(&epochs(&[0.27]), None, 13, &de()).unwrap();
        assert!(close(f.predicted_kwh, 3.51));
        assert!(close(f.predicted_duration_hours, 6.5));
        assert!(!f.includes_setup);
    }

    #[test]
    fn finished_run_is_fixed_point() {
        let e = epochs(&[0.1, 0.2, 0.4]);
        let setup = PhaseSummary::setup(0.1, 0.05, &de());
        let f = predict(&e, Some(&setup), 3, &de()).unwrap();
        assert!(close(f.predicted_kwh, 0.75));
        assert!(close(f.predicted_duration_hours, 1.6));
        assert!(close(f.predicted_co2e_kg, co2e(0.75, &de())));
        assert!(f.includes_setup);
    }

    #[test]
    fn ramp_underestimates_then_refines() {
        let e = epochs(&[0.10, 0.12, 0.14]);
        let f1 = predict(&e[..1], None, 3, &de()).unwrap();
        assert!(close(f1.predicted_kwh, 0.30));
        let f2 = refine(&f1, &e[1]).unwrap();
        assert!(close(f2.predicted_kwh, 0.33));
        let f3 = refine(&f2, &e[2]).unwrap();
        assert!(close(f3.predicted_kwh, 0.36));
        assert_eq!(f3.basis_epochs, 3);
    }

    #[test]
    fn identical_epochs_keep_prediction() {
        let e = epochs(&[0.2, 0.2, 0.2]);
        let f1 = predict(&e[..1], None, 10, &de()).unwrap();
        let f2 = refine(&f1, &e[1]).unwrap();
        let f3 = refine(&f2, &e[2]).unwrap();
        assert!((f1.predicted_kwh - f2.predicted_kwh).abs() <= 1e-12);
        assert!((f2.predicted_kwh - f3.predicted_kwh).abs() <= 1e-12);
    }

    #[test]
    fn heavier_epoch_raises_prediction() {
        let e = epochs(&[0.2, 0.5]);
        let f1 = predict(&e[..1], None, 10, &de()).unwrap();
        let f2 = refine(&f1, &e[1]).unwrap();
        assert!(f2.predicted_kwh > f1.predicted_kwh);
    }

    #[test]
    fn errors() {
        assert_eq!(
            predict(&[], None, 3, &de()),
            Err(ForecastError::NoCompletedEpochs)
        );
        assert!(matches!(
            predict(&epochs(&[0.1, 0.1]), None, 1, &de()),
            Err(ForecastError::PlannedBelowCompleted { .. })
        ));
        let e = epochs(&[0.1, 0.1]);
        let f = predict(&e, None, 5, &de()).unwrap();
        assert_eq!(
            refine(&f, &e[0]),
            Err(ForecastError::EpochIndexRegression { last: 2, got: 1 })
        );
    }

    proptest::proptest! {
        #[test]
        fn co2e_follows_energy(kwh in proptest::collection::vec(0.0f64..10.0, 1..10), extra in 0u32..40, g in 1.0f64..900.0) {
            let i = CarbonIntensity::custom(g);
            let e: Vec<_> = kwh.iter().enumerate().map(|(n, &x)| PhaseSummary::epoch(n as u32 + 1, 1.0, x, &i)).collect();
            let f = predict(&e, None, e.len() as u32 + extra, &i).unwrap();
            proptest::prop_assert!((f.predicted_co2e_kg - co2e(f.predicted_kwh, &i)).abs() <= 1e-12 * f.predicted_co2e_kg.abs());
        }

        #[test]
        fn linear_in_planned_epochs(kwh in 0.01f64..10.0, n in 1u32..100) {
            let e = epochs(&[kwh]);
            let one = predict(&e, None, 1, &de()).unwrap().predicted_kwh;
            let many = predict(&e, None, n, &de()).unwrap().predicted_kwh;
            proptest::prop_assert!((many - n as f64 * one).abs() <= 1e-12 * many);
        }
    }
}
