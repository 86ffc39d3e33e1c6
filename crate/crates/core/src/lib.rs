pub mod csvfmt;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod vision;

pub use error::{Error, Result};
