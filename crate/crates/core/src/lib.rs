pub mod calibration;
pub mod data;
pub mod dual;
pub mod error;
pub mod fairness;
pub mod federated;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub mod inprocessing;
pub mod postprocessing;
pub mod experiment;
