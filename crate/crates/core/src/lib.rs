//! Simulator for wireless networked control loops that co-designs sensor
//! scheduling, transmit power and Gaussian-process state prediction through
//! Lyapunov drift-plus-penalty optimization.
//!
//! Modules follow the signal path: [`plant`] dynamics and LQR, the
//! [`wireless`] uplink with MMSE reception, [`gpr`] prediction for loops that
//! were not served, the [`scheduler`] that decides who transmits, and [`sim`]
//! which runs the whole fleet slot by slot.

pub mod cli;
pub mod config;
pub mod error;
pub mod gpr;
pub mod output;
pub mod plant;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod wireless;

pub use config::SimConfig;
pub use error::{Error, Result};
