pub mod cdpgen;
pub mod diffengine;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod objective;
pub mod pairing;
pub mod postestimator;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub use error::{Error, Result};
