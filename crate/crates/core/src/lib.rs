//! Planar simulation of a cable-driven undulatory swimmer threading a lattice
//! of posts, with tunable joint compliance and the harness used to measure
//! how compliance, gait and lattice disorder affect traversal.

pub mod actuation;
pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod gait;

pub use error::{Error, Result};
