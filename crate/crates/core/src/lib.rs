pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod hypernet;
pub mod kernel;
pub mod layout;
pub mod model;
pub mod primary;
pub mod rng;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{HyperEnergyModel, ModelSpec, ThetaMode, Variant};
