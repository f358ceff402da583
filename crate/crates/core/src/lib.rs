pub mod detector;
pub mod dtree;
pub mod error;
pub mod io;
pub mod measurement;
pub mod montecarlo;
pub mod phasor;
pub mod plot;
pub mod rng;
pub mod sim;
pub mod thermal;

pub use error::{Error, Result};
