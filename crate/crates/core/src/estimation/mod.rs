//! Calibration from observations: the particle filter for capacity and
//! biting rate, the capacity-on-precipitation regression, and the bite-rate
//! and trap-count fits.

pub mod bites;
pub mod capacity;
pub mod pf;
pub mod traps;

pub use bites::{fit_bites_ig, BiteFit};
pub use capacity::{fit_capacity_ig, CapacityFit, CapacityFitConfig};
pub use pf::{load_cases, observation_likelihood, CaseSeries, PfConfig, PfModel, PfResult};
pub use traps::{fit_trap_scaling, TrapFit, TrapFitConfig};
