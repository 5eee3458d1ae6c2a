//! Simulation, bounds, and verification for sending a value from one
//! fault-prone replica cluster to another.
//!
//! The modules build on each other bottom-up: [`model`] describes systems,
//! [`certs`] simulates signatures, [`bounds`] computes lower bounds and picks a
//! protocol, [`protocols`] turns a choice into a send plan, and [`sim`] runs
//! plans against adversaries.

pub mod bounds;
pub mod certs;
pub mod model;
pub mod protocols;
pub mod sim;
pub mod cli;
