//! Simulation and verification of a regular register emulated by identified
//! servers for anonymous clients, where servers may be rational malicious
//! players.

pub mod adversary;
pub mod checker;
pub mod error;
pub mod game;
pub mod register;
pub mod report;
pub mod scenario;
pub mod simnet;
pub mod trace;
pub mod variants;
pub mod world;

pub use error::{Error, Result};
