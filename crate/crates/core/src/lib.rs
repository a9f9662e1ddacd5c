//! Reservoir-computing detection of unknown disturbances in network-coupled
//! dynamical systems.
//!
//! A system is first driven by known training forcings; a reservoir computer
//! learns to map the observed trajectory back onto those forcings. Applied to
//! trajectories of the same system under an unknown disturbance, the trained
//! readout recovers where the system is disturbed and how.

pub mod detector;
pub mod error;
pub mod experiment;
pub mod io;
pub mod models;
pub mod netgen;
pub mod reservoir;
pub mod seeds;
pub mod signals;
pub mod sparse;

pub use error::{Error, Result};
