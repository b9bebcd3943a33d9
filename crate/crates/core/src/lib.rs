//! Energy and carbon accounting for long-running compute experiments.
//!
//! Power flows from [`probe`]s through the [`sampler`] into a [`SampleLog`],
//! which [`energy`] integrates to kWh and [`carbon`] converts to CO2e.
//! [`forecast`] extrapolates a run from its first epoch, [`ledger`] stores
//! finished runs as JSON Lines and renders reports, and [`kgverb`] is a small
//! knowledge-graph verbalization workload that exercises the whole loop.
//!
//! ```
//! use carbonledger::carbon::{co2e, car_km_equivalent, IntensityRegistry};
//! use carbonledger::energy::{closed_form_energy, RunParams};
//!
//! let energy = closed_form_energy(&RunParams {
//!     duration_hours: 1.0,
//!     gpu_count: 2,
//!     avg_gpu_watts: 250.0,
//!     pue: 1.55,
//! })
//! .unwrap();
//! let de = IntensityRegistry::default().get("DE").unwrap().clone();
//! let kg = co2e(energy.facility_kwh, &de);
//! assert!((kg - 0.2945).abs() < 1e-12);
//! assert!(car_km_equivalent(kg) > 2.0);
//! ```

pub mod carbon;
pub mod cli;
pub mod energy;
pub mod forecast;
#[cfg(feature = "hardware")]
pub mod hardware;
pub mod kgverb;
pub mod ledger;
pub mod probe;
pub mod sampler;
pub mod tracker;

pub use carbon::{CarbonIntensity, EmissionsReport, EquivalenceFactors, IntensityRegistry};
pub use energy::{EnergyResult, RunParams};
pub use forecast::{Forecast, PhaseSummary};
pub use ledger::ExperimentRecord;
pub use probe::{PowerSample, Probe, ProbeDescriptor};
pub use sampler::{EpochEvent, Phase, SampleLog};
