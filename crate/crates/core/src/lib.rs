//! Climate-driven *Aedes* life-cycle and dengue transmission models with
//! Erlang-distributed development, calibration tools and a gridded
//! outbreak-risk pipeline.

pub mod error;
pub mod estimation;
pub mod forcing;
pub mod lifecycle;
pub mod ode;
pub mod phasetype;
pub mod pipeline;
pub mod risk;
pub mod transmission;

pub use error::{Error, Result};
