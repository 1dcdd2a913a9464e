//! Video object insertion: data handling, models, training and evaluation.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod losses;
pub mod models;
pub mod pairing;
pub mod training;

pub use error::{Error, Result};
