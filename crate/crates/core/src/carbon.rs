//! Energy to CO2-equivalent mass, region intensities, and everyday equivalences.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Env var naming a registry file to load instead of the built-in one.
pub const REGISTRY_ENV: &str = "CARBONLEDGER_REGISTRY";

/// Passenger-car emissions per km implied by the reference efficiency table.
pub const DEFAULT_CAR_KG_PER_KM: f64 = 0.1206;
/// Metric tons per London to New York round flight.
pub const DEFAULT_FLIGHT_T_PER_ROUND_TRIP: f64 = 0.8333;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonIntensity {
    pub region: String,
    pub grams_per_kwh: f64,
    pub source: String,
    pub as_of: NaiveDate,
}

impl CarbonIntensity {
    /// An ad-hoc intensity not tied to a registry entry.
    pub fn custom(grams_per_kwh: f64) -> Self {
        CarbonIntensity {
            region: "custom".into(),
            grams_per_kwh,
            source: "user supplied".into(),
            as_of: NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date"),
        }
    }

    pub fn kg_per_kwh(&self) -> f64 {
        self.grams_per_kwh / 1000.0
    }
}

/// Kilograms of CO2e for `energy_kwh` at `intensity`.
pub fn co2e(energy_kwh: f64, intensity: &CarbonIntensity) -> f64 {
    co2e_at(energy_kwh, intensity.grams_per_kwh)
}

pub fn co2e_at(energy_kwh: f64, grams_per_kwh: f64) -> f64 {
    energy_kwh * grams_per_kwh / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceFactors {
    pub car_kg_per_km: f64,
    pub flight_t_per_round_trip: f64,
}

impl Default for EquivalenceFactors {
    fn default() -> Self {
        EquivalenceFactors {
            car_kg_per_km: DEFAULT_CAR_KG_PER_KM,
            flight_t_per_round_trip: DEFAULT_FLIGHT_T_PER_ROUND_TRIP,
        }
    }
}

impl EquivalenceFactors {
    pub fn car_km(&self, co2e_kg: f64) -> f64 {
        co2e_kg / self.car_kg_per_km
    }

    pub fn round_flights(&self, co2e_metric_tons: f64) -> f64 {
        co2e_metric_tons / self.flight_t_per_round_trip
    }
}

pub fn car_km_equivalent(co2e_kg: f64) -> f64 {
    EquivalenceFactors::default().car_km(co2e_kg)
}

pub fn flight_equivalent(co2e_metric_tons: f64) -> f64 {
    EquivalenceFactors::default().round_flights(co2e_metric_tons)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionsReport {
    pub energy_kwh: f64,
    pub intensity_g_per_kwh: f64,
    pub co2e_kg: f64,
    pub car_km: f64,
    pub round_flights: f64,
}

impl EmissionsReport {
    pub fn new(energy_kwh: f64, intensity: &CarbonIntensity, factors: &EquivalenceFactors) -> Self {
        let co2e_kg = co2e(energy_kwh, intensity);
        EmissionsReport {
            energy_kwh,
            intensity_g_per_kwh: intensity.grams_per_kwh,
            co2e_kg,
            car_km: factors.car_km(co2e_kg),
            round_flights: factors.round_flights(co2e_kg / 1000.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("line {line}: duplicate region {region}")]
    DuplicateRegion { line: u64, region: String },
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Region code → intensity. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityRegistry {
    regions: BTreeMap<String, CarbonIntensity>,
}

fn builtin() -> Vec<CarbonIntensity> {
    vec![CarbonIntensity {
        region: "DE".into(),
        grams_per_kwh: 380.0,
        source: "nowtricity".into(),
        as_of: NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date"),
    }]
}

impl Default for IntensityRegistry {
    fn default() -> Self {
        IntensityRegistry {
            regions: builtin()
                .into_iter()
                .map(|c| (c.region.clone(), c))
                .collect(),
        }
    }
}

impl IntensityRegistry {
    pub fn get(&self, region: &str) -> Option<&CarbonIntensity> {
        self.regions.get(region)
    }

    /// Entries sorted by region code.
    pub fn iter(&self) -> impl Iterator<Item = &CarbonIntensity> {
        self.regions.values()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Built-in defaults overlaid with rows from `reader`
    /// (`region,grams_per_kwh,source,as_of`, `#` comments).
    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self, RegistryError> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|source| RegistryError::Io {
                path: "<reader>".into(),
                source,
            })?;
        let mut seen: BTreeMap<String, u64> = BTreeMap::new();
        let mut reg = IntensityRegistry::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            // one reader per line keeps line numbers exact around comments
            let row = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(trimmed.as_bytes())
                .records()
                .next()
                .transpose()
                .map_err(|e| RegistryError::MalformedRow {
                    line,
                    message: e.to_string(),
                })?
                .unwrap_or_default();
            let bad = |message: String| RegistryError::MalformedRow { line, message };
            if row.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", row.len())));
            }
            let region = row[0].to_string();
            if region.is_empty() {
                return Err(bad("empty region code".into()));
            }
            let grams: f64 = row[1]
                .parse()
                .map_err(|_| bad(format!("bad grams_per_kwh {:?}", &row[1])))?;
            if !(grams.is_finite() && grams > 0.0) {
                return Err(bad(format!("grams_per_kwh must be positive, got {grams}")));
            }
            let as_of = NaiveDate::parse_from_str(&row[3], "%Y-%m-%d")
                .map_err(|_| bad(format!("bad as_of date {:?}", &row[3])))?;
            if seen.insert(region.clone(), line).is_some() {
                return Err(RegistryError::DuplicateRegion { line, region });
            }
            reg.regions.insert(
                region.clone(),
                CarbonIntensity {
                    region,
                    grams_per_kwh: grams,
                    source: row[2].to_string(),
                    as_of,
                },
            );
        }
        Ok(reg)
    }
}

pub fn load_intensity_registry(path: &Path) -> Result<IntensityRegistry, RegistryError> {
    let file = std::fs::File::open(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    IntensityRegistry::from_reader(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn de() -> CarbonIntensity {
        IntensityRegistry::default().get("DE").unwrap().clone()
    }

    #[test]
    fn co2e_examples() {
        assert!((co2e(3.53, &de()) - 1.3414).abs() < 1e-12);
        assert_eq!(co2e(0.0, &de()), 0.0);
        assert!((co2e(3.53, &CarbonIntensity::custom(294.6)) - 1.04).abs() < 0.005);
    }

    #[test]
    fn car_km_examples() {
        assert!((car_km_equivalent(1.04) - 8.62).abs() < 0.05);
        assert!((car_km_equivalent(3.95) - 32.80).abs() < 0.10);
        assert_eq!(car_km_equivalent(0.0), 0.0);
    }

    #[test]
    fn flight_examples() {
        assert!((flight_equivalent(25.0) - 30.0).abs() < 0.1);
        assert!((flight_equivalent(500.0) - 600.0).abs() < 0.5);
        assert!((flight_equivalent(1.59) - 1.91).abs() < 0.05);
    }

    #[test]
    fn report_fields_are_consistent() {
        let r = EmissionsReport::new(10.0, &de(), &EquivalenceFactors::default());
        assert!((r.co2e_kg - 3.8).abs() < 1e-12);
        assert!((r.car_km - 3.8 / 0.1206).abs() < 1e-12);
        assert!((r.round_flights - 0.0038 / 0.8333).abs() < 1e-15);
    }

    #[test]
    fn registry_from_file_row() {
        let reg =
            IntensityRegistry::from_reader("DE,380,nowtricity,2022-01-01\n".as_bytes()).unwrap();
        assert_eq!(reg.get("DE").unwrap().grams_per_kwh, 380.0);
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn empty_registry_file_gives_defaults() {
        let reg = IntensityRegistry::from_reader("".as_bytes()).unwrap();
        assert_eq!(reg, IntensityRegistry::default());
        assert_eq!(reg.get("DE").unwrap().grams_per_kwh, 380.0);
    }

    #[test]
    fn registry_rows_override_and_extend() {
        let text = "# comment\nFR,56,rte,2023-06-30\nDE,350,other,2024-01-01\n";
        let reg = IntensityRegistry::from_reader(text.as_bytes()).unwrap();
        let codes: Vec<_> = reg.iter().map(|c| c.region.as_str()).collect();
        assert_eq!(codes, vec!["DE", "FR"]);
        assert_eq!(reg.get("DE").unwrap().grams_per_kwh, 350.0);
    }

    #[test]
    fn duplicate_region_rejected() {
        let text = "DE,380,a,2022-01-01\nDE,381,b,2022-01-01\n";
        match IntensityRegistry::from_reader(text.as_bytes()) {
            Err(RegistryError::DuplicateRegion { line, region }) => {
                assert_eq!(line, 2);
                assert_eq!(region, "DE");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        for (text, want) in [
            ("DE,380,a,2022-01-01\nFR,abc,b,2022-01-01\n", 2),
            ("# c\nDE,380,a\n", 2),
            ("DE,-5,a,2022-01-01\n", 1),
            ("DE,380,a,yesterday\n", 1),
        ] {
            match IntensityRegistry::from_reader(text.as_bytes()) {
                Err(RegistryError::MalformedRow { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn linear_in_energy(e in 0.0f64..1e6, a in 0.0f64..1e3, g in 1.0f64..1000.0) {
            let i = CarbonIntensity::custom(g);
            let lhs = co2e(a * e, &i);
            let rhs = a * co2e(e, &i);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn increasing_in_intensity(e in 1e-6f64..1e6, g in 1.0f64..1000.0, d in 1e-3f64..100.0) {
            prop_assert!(co2e(e, &CarbonIntensity::custom(g + d)) > co2e(e, &CarbonIntensity::custom(g)));
        }
    }
}
