//! Command-line front end for the hbem engine: the assembly benchmark and
//! the sound-hard scattering driver.

pub mod bench;
pub mod config;
pub mod error;
pub mod scatter;

pub use error::{CliError, EXIT_CONFIG, EXIT_NUMERICAL};
