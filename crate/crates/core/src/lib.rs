pub mod adversary;
pub mod autodiff;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod params;
pub mod repr;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
