//! Bottom-up per-kiln emission estimates.
//!
//! Regional seasonal brick output is spread evenly across kilns and working
//! days to get bricks per kiln-day; that mass times a per-pollutant factor
//! (g/kg) gives daily emissions, and daily times working days gives the
//! seasonal total.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::KilnClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "PM10")]
    Pm10,
    #[serde(rename = "PM2.5")]
    Pm25,
    #[serde(rename = "SOx")]
    Sox,
    #[serde(rename = "NOx")]
    Nox,
}

impl Pollutant {
    pub const ALL: [Pollutant; 4] = [Pollutant::Pm10, Pollutant::Pm25, Pollutant::Sox, Pollutant::Nox];

    /// Column-name stem used in tabular exports.
    pub fn column_stem(self) -> &'static str {
        match self {
            Pollutant::Pm10 => "pm10",
            Pollutant::Pm25 => "pm25",
            Pollutant::Sox => "sox",
            Pollutant::Nox => "nox",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pollutant::Pm10 => "PM10",
            Pollutant::Pm25 => "PM2.5",
            Pollutant::Sox => "SOx",
            Pollutant::Nox => "NOx",
        })
    }
}

/// Grams of pollutant per kilogram of fired brick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Pollutant, f64>", into = "BTreeMap<Pollutant, f64>")]
pub struct EmissionFactors(BTreeMap<Pollutant, f64>);

impl Default for EmissionFactors {
    fn default() -> Self {
        EmissionFactors(BTreeMap::from([
            (Pollutant::Pm10, 9.7),
            (Pollutant::Pm25, 6.8),
            (Pollutant::Sox, 4.6),
            (Pollutant::Nox, 4.7),
        ]))
    }
}

impl TryFrom<BTreeMap<Pollutant, f64>> for EmissionFactors {
    type Error = Error;

    fn try_from(map: BTreeMap<Pollutant, f64>) -> Result<Self> {
        for p in Pollutant::ALL {
            match map.get(&p) {
                Some(&v) if v > 0.0 && v.is_finite() => {}
                Some(&v) => {
                    return Err(Error::InvalidParameter(format!(
                        "emission factor for {p} must be positive, got {v}"
                    )))
                }
                None => return Err(Error::InvalidParameter(format!("missing emission factor for {p}"))),
            }
        }
        Ok(EmissionFactors(map))
    }
}

impl From<EmissionFactors> for BTreeMap<Pollutant, f64> {
    fn from(f: EmissionFactors) -> Self {
        f.0
    }
}

impl EmissionFactors {
    pub fn get(&self, p: Pollutant) -> f64 {
        self.0[&p]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pollutant, f64)> + '_ {
        self.0.iter().map(|(&p, &v)| (p, v))
    }
}

/// Default factor set plus optional per-kiln-type replacements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorTable {
    #[serde(default)]
    pub default: EmissionFactors,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_type: BTreeMap<KilnClass, EmissionFactors>,
}

impl FactorTable {
    pub fn for_type(&self, kiln_type: Option<KilnClass>) -> &EmissionFactors {
        kiln_type
            .and_then(|t| self.by_type.get(&t))
            .unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProductionParams {
    pub regional_seasonal_bricks: f64,
    pub kiln_count: u32,
    pub working_days: u32,
    pub brick_mass_kg: f64,
    /// Published per-kiln daily output used in reproduce mode.
    pub published_daily_bricks: Option<f64>,
}

impl Default for ProductionParams {
    fn default() -> Self {
        ProductionParams {
            regional_seasonal_bricks: 0.65 * 45e9,
            kiln_count: 11_277,
            working_days: 215,
            brick_mass_kg: 3.0,
            published_daily_bricks: Some(12_068.0),
        }
    }
}

impl ProductionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.regional_seasonal_bricks > 0.0) || !(self.brick_mass_kg > 0.0) {
            return Err(Error::InvalidParameter(
                "brick production and brick mass must be positive".into(),
            ));
        }
        if self.kiln_count == 0 || self.working_days == 0 {
            return Err(Error::InvalidParameter(
                "kiln count and working days must be positive".into(),
            ));
        }
        if self.working_days > 365 {
            return Err(Error::InvalidParameter(format!(
                "working days {} exceeds a year",
                self.working_days
            )));
        }
        if let Some(v) = self.published_daily_bricks {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter("published daily bricks must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    /// Divide regional output by kilns and working days.
    Exact,
    /// Use the published per-kiln daily output when one is set.
    #[default]
    ReproducePaper,
}

/// Days in operation after seasonal shutdowns.
pub fn working_days(year_days: u32, shutdown_days: u32) -> Result<u32> {
    let days = year_days.checked_sub(shutdown_days).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "shutdown days {shutdown_days} exceed year length {year_days}"
        ))
    })?;
    if days == 0 {
        log::warn!("zero working days: kilns produce nothing");
    }
    Ok(days)
}

/// `regional_seasonal_bricks / (kiln_count * working_days)`.
pub fn computed_daily_production(params: &ProductionParams) -> Result<f64> {
    if params.kiln_count == 0 || params.working_days == 0 {
        return Err(Error::InvalidParameter(
            "kiln count and working days must be positive".into(),
        ));
    }
    Ok(params.regional_seasonal_bricks / (params.kiln_count as f64 * params.working_days as f64))
}

/// Bricks per kiln per working day. Any gap between the computed and the
/// published figure is logged in both modes.
pub fn daily_production_per_kiln(params: &ProductionParams, mode: EmissionMode) -> Result<f64> {
    let chosen = select_production(params, mode)?;
    if let Some((computed, published)) = production_discrepancy(params)? {
        if (published - computed).abs() > 0.5 {
            log::warn!(
                "published daily production {published} bricks/day differs from computed {computed:.2}; using {}",
                if chosen == published { "published" } else { "computed" }
            );
        }
    }
    Ok(chosen)
}

fn select_production(params: &ProductionParams, mode: EmissionMode) -> Result<f64> {
    let computed = computed_daily_production(params)?;
    Ok(match (mode, params.published_daily_bricks) {
        (EmissionMode::ReproducePaper, Some(published)) => published,
        _ => computed,
    })
}

/// `(computed, published)` when a published figure is configured and the two differ.
pub fn production_discrepancy(params: &ProductionParams) -> Result<Option<(f64, f64)>> {
    let computed = computed_daily_production(params)?;
    Ok(params
        .published_daily_bricks
        .filter(|&p| p != computed)
        .map(|p| (computed, p)))
}

/// kg of brick fired per kiln per day.
pub fn daily_brick_mass(bricks_per_day: f64, brick_mass_kg: f64) -> f64 {
    bricks_per_day * brick_mass_kg
}

/// kg/day per pollutant: factor (g/kg) x mass (kg/day) / 1000.
pub fn daily_emissions(factors: &EmissionFactors, mass_kg_per_day: f64) -> BTreeMap<Pollutant, f64> {
    factors
        .iter()
        .map(|(p, grams_per_kg)| (p, grams_per_kg * mass_kg_per_day / 1000.0))
        .collect()
}

/// kg/year per pollutant.
pub fn seasonal_emissions(daily: &BTreeMap<Pollutant, f64>, working_days: u32) -> BTreeMap<Pollutant, f64> {
    daily
        .iter()
        .map(|(&p, &d)| (p, d * working_days as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollutantEmission {
    pub daily_kg: f64,
    pub seasonal_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionProfile {
    pub kiln_type: Option<KilnClass>,
    pub daily_brick_mass_kg: f64,
    pub working_days: u32,
    pub pollutants: BTreeMap<Pollutant, PollutantEmission>,
}

impl EmissionProfile {
    pub fn daily_kg(&self, p: Pollutant) -> f64 {
        self.pollutants[&p].daily_kg
    }

    pub fn seasonal_kg(&self, p: Pollutant) -> f64 {
        self.pollutants[&p].seasonal_kg
    }
}

pub fn emission_profile_for_kiln(
    kiln_type: Option<KilnClass>,
    params: &ProductionParams,
    factors: &FactorTable,
    mode: EmissionMode,
) -> Result<EmissionProfile> {
    params.validate()?;
    let bricks = select_production(params, mode)?;
    let mass = daily_brick_mass(bricks, params.brick_mass_kg);
    let daily = daily_emissions(factors.for_type(kiln_type), mass);
    let seasonal = seasonal_emissions(&daily, params.working_days);
    let pollutants = daily
        .iter()
        .map(|(&p, &d)| {
            (
                p,
                PollutantEmission {
                    daily_kg: d,
                    seasonal_kg: seasonal[&p],
                },
            )
        })
        .collect();
    Ok(EmissionProfile {
        kiln_type,
        daily_brick_mass_kg: mass,
        working_days: params.working_days,
        pollutants,
    })
}

/// Factor table and production parameters as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionsConfig {
    pub factors: FactorTable,
    pub params: ProductionParams,
}

impl EmissionsConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: EmissionsConfig = serde_json::from_str(&text)?;
        cfg.params.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn working_day_examples() {
        assert_eq!(working_days(365, 150).unwrap(), 215);
        assert_eq!(working_days(365, 0).unwrap(), 365);
        assert_eq!(working_days(365, 365).unwrap(), 0);
        assert!(working_days(365, 366).is_err());
    }

    #[test]
    fn production_modes() {
        let params = ProductionParams::default();
        let exact = daily_production_per_kiln(&params, EmissionMode::Exact).unwrap();
        // 29.25e9 / 2,424,555 by long division: 12,064 rem 168,480 -> 12,064.0695
        assert_eq!(11_277u64 * 215, 2_424_555);
        assert_eq!(2_424_555u64 * 12_064 + 168_480, 29_250_000_000);
        assert!((exact - 12_064.069_5).abs() < 1e-4);
        assert_eq!(daily_production_per_kiln(&params, EmissionMode::ReproducePaper).unwrap(), 12_068.0);

        let one = ProductionParams {
            regional_seasonal_bricks: 100.0,
            kiln_count: 1,
            working_days: 1,
            published_daily_bricks: None,
            ..ProductionParams::default()
        };
        assert_eq!(daily_production_per_kiln(&one, EmissionMode::ReproducePaper).unwrap(), 100.0);

        let (computed, published) = production_discrepancy(&params).unwrap().unwrap();
        assert_eq!(published, 12_068.0);
        assert!((computed - 12_064.07).abs() < 0.01);
    }

    #[test]
    fn brick_mass() {
        assert_eq!(daily_brick_mass(12_068.0, 3.0), 36_204.0);
        assert_eq!(daily_brick_mass(0.0, 3.0), 0.0);
        assert!((daily_brick_mass(12_064.3, 3.0) - 36_192.9).abs() < 1e-9);
    }

    #[test]
    fn daily_values() {
        let d = daily_emissions(&EmissionFactors::default(), 36_204.0);
        assert!((d[&Pollutant::Pm10] - 351.18).abs() < 0.005);
        assert!((d[&Pollutant::Pm25] - 246.19).abs() < 0.005);
        assert!((d[&Pollutant::Sox] - 166.54).abs() < 0.005);
        assert!((d[&Pollutant::Nox] - 170.16).abs() < 0.005);
        let zero = daily_emissions(&EmissionFactors::default(), 0.0);
        assert!(zero.values().all(|&v| v == 0.0));
    }

    #[test]
    fn seasonal_values() {
        let daily = BTreeMap::from([(Pollutant::Pm10, 351.18), (Pollutant::Sox, 166.54)]);
        let s = seasonal_emissions(&daily, 215);
        assert!((s[&Pollutant::Pm10] - 75_503.70).abs() < 1e-6);
        assert!((s[&Pollutant::Sox] - 35_806.1).abs() < 1e-6);
        assert!((s[&Pollutant::Sox] - 35_810.10).abs() < 5.0);
        assert!(seasonal_emissions(&daily, 0).values().all(|&v| v == 0.0));
    }

    #[test]
    fn profile_by_type() {
        let params = ProductionParams::default();
        let table = FactorTable::default();
        let f = emission_profile_for_kiln(Some(KilnClass::Fcbk), &params, &table, EmissionMode::ReproducePaper).unwrap();
        let z = emission_profile_for_kiln(Some(KilnClass::ZigZag), &params, &table, EmissionMode::ReproducePaper).unwrap();
        assert_eq!(f.pollutants, z.pollutants);
        assert_ne!(f.kiln_type, z.kiln_type);
        assert!((f.daily_kg(Pollutant::Pm10) - 351.18).abs() < 0.005);

        let one_day = ProductionParams {
            working_days: 1,
            ..params
        };
        let p = emission_profile_for_kiln(None, &one_day, &table, EmissionMode::Exact).unwrap();
        for pol in Pollutant::ALL {
            assert_eq!(p.daily_kg(pol), p.seasonal_kg(pol));
        }
    }

    #[test]
    fn per_type_override() {
        let mut table = FactorTable::default();
        let halved: BTreeMap<_, _> = EmissionFactors::default().iter().map(|(p, v)| (p, v / 2.0)).collect();
        table.by_type.insert(KilnClass::ZigZag, EmissionFactors::try_from(halved).unwrap());
        let params = ProductionParams::default();
        let f = emission_profile_for_kiln(Some(KilnClass::Fcbk), &params, &table, EmissionMode::Exact).unwrap();
        let z = emission_profile_for_kiln(Some(KilnClass::ZigZag), &params, &table, EmissionMode::Exact).unwrap();
        assert!((z.daily_kg(Pollutant::Nox) * 2.0 - f.daily_kg(Pollutant::Nox)).abs() < 1e-9);
    }

    #[test]
    fn factor_validation() {
        let missing = BTreeMap::from([(Pollutant::Pm10, 9.7)]);
        assert!(EmissionFactors::try_from(missing).is_err());
        let json = r#"{"PM10": 9.7, "PM2.5": 6.8, "SOx": 4.6, "NOx": -1}"#;
        assert!(serde_json::from_str::<EmissionFactors>(json).is_err());
        let json = r#"{"factors": {"default": {"PM10": 9.7, "PM2.5": 6.8, "SOx": 4.6, "NOx": 4.7}}, "params": {"kiln_count": 10}}"#;
        let cfg: EmissionsConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.params.kiln_count, 10);
        assert_eq!(cfg.params.working_days, 215);
    }

    #[test]
    fn per_type_factors_keyed_by_class_code() {
        let json = r#"{"by_type": {"1": {"PM10": 1, "PM2.5": 1, "SOx": 1, "NOx": 1}}}"#;
        let table: FactorTable = serde_json::from_str(json).unwrap();
        assert_eq!(table.for_type(Some(KilnClass::ZigZag)).get(Pollutant::Pm10), 1.0);
        assert_eq!(table.for_type(Some(KilnClass::Fcbk)).get(Pollutant::Pm10), 9.7);
        let back: FactorTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
        assert_eq!(back, table);
    }
}
