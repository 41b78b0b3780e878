pub mod bounds;
pub mod classical;
pub mod error;
pub mod harness;
pub mod potentials;
pub mod ot;
pub mod phasespace;
pub mod quantum;
pub mod sampling;

pub use error::{Error, Result};
