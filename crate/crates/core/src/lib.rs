//! Simulation and analysis of a four-port bidirectional DC-DC converter built
//! from two three-switch legs.

pub mod control;
pub mod duty;
pub mod scenario;
pub mod sim;
pub mod topology;
