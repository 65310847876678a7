//! TOML run configurations. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use aedes_core::estimation::{CapacityFitConfig, PfConfig, TrapFitConfig};
use aedes_core::forcing::{CapacityModel, RateSet};
use aedes_core::lifecycle::{CapacitySource, StageTotals, BURN_IN_DAYS};
use aedes_core::risk::{RiskModel, TrainConfig};
use aedes_core::transmission::EpiParams;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_rates(base: &Path, rates: &Option<PathBuf>) -> Result<RateSet, CliError> {
    match rates {
        Some(p) => Ok(RateSet::load(&resolve(base, p))?),
        None => Ok(RateSet::default_tables()),
    }
}

/// Exactly one of `constant` (larvae) or `model` (a capacity-model file,
/// multiplied by `scale`, default 1).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    pub constant: Option<f64>,
    pub model: Option<PathBuf>,
    pub scale: Option<f64>,
}

impl CapacityConfig {
    pub fn source(&self, base: &Path) -> Result<CapacitySource, CliError> {
        match (self.constant, &self.model) {
            (Some(c), None) => {
                if self.scale.is_some() {
                    return Err(CliError::Validation(
                        "capacity.scale only applies to capacity.model".into(),
                    ));
                }
                Ok(CapacitySource::Constant(c))
            }
            (None, Some(p)) => Ok(CapacitySource::Precipitation {
                model: CapacityModel::load(&resolve(base, p))?,
                per_human_scale: self.scale.unwrap_or(1.0),
            }),
            _ => Err(CliError::Validation(
                "set exactly one of capacity.constant and capacity.model".into(),
            )),
        }
    }
}

fn default_initial() -> StageTotals {
    StageTotals {
        eggs: 100.0,
        ..StageTotals::default()
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub climate: PathBuf,
    pub j: usize,
    pub rates: Option<PathBuf>,
    pub capacity: CapacityConfig,
    pub horizon_days: Option<usize>,
    #[serde(default)]
    pub burn_in_days: usize,
    #[serde(default = "default_initial")]
    pub initial: StageTotals,
    #[serde(default)]
    pub substates: bool,
    /// Runs the transmission model when present.
    pub epi: Option<EpiParams>,
    #[serde(default = "one")]
    pub initial_infectious: f64,
}

fn default_oracle_horizon() -> usize {
    200
}

fn default_quad_dt() -> f64 {
    0.05
}

fn default_tolerance() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Climate file; alternatively a constant `temperature`.
    pub climate: Option<PathBuf>,
    pub temperature: Option<f64>,
    pub j: usize,
    pub rates: Option<PathBuf>,
    pub capacity: CapacityConfig,
    #[serde(default = "default_initial")]
    pub initial: StageTotals,
    #[serde(default = "default_oracle_horizon")]
    pub horizon_days: usize,
    #[serde(default = "default_quad_dt")]
    pub quad_dt: f64,
    /// Largest accepted deviation relative to each stage's peak.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPfConfig {
    pub cases: PathBuf,
    pub location: Option<String>,
    pub climate: PathBuf,
    pub j: usize,
    pub rates: Option<PathBuf>,
    #[serde(default)]
    pub epi: EpiParams,
    #[serde(default)]
    pub pf: PfConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCapacityConfig {
    /// CSV `precip_m,capacity`.
    pub pairs: PathBuf,
    #[serde(default)]
    pub fit: CapacityFitConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBitesConfig {
    /// CSV with a single `n_bites` column.
    pub values: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTrapsConfig {
    /// CSV `count,adults`.
    pub traps: PathBuf,
    #[serde(default)]
    pub fit: TrapFitConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRiskConfig {
    /// CSVs `week_start,cases,r0_ma,vf_ma`, one per location.
    pub weeks: Vec<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_burn_in() -> usize {
    BURN_IN_DAYS
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskmapConfig {
    pub grid: PathBuf,
    pub j: usize,
    pub rates: Option<PathBuf>,
    /// Defaults to the shipped capacity model.
    pub capacity_model: Option<PathBuf>,
    /// Defaults to the shipped risk model.
    pub risk_model: Option<PathBuf>,
    #[serde(default = "default_burn_in")]
    pub burn_in_days: usize,
    #[serde(default)]
    pub epi: EpiParams,
}

impl RiskmapConfig {
    pub fn capacity(&self, base: &Path) -> Result<CapacityModel, CliError> {
        match &self.capacity_model {
            Some(p) => Ok(CapacityModel::load(&resolve(base, p))?),
            None => Ok(CapacityModel::default_model()),
        }
    }

    pub fn risk(&self, base: &Path) -> Result<RiskModel, CliError> {
        match &self.risk_model {
            Some(p) => Ok(RiskModel::load(&resolve(base, p))?),
            None => Ok(RiskModel::default_model()),
        }
    }
}
