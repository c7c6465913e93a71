//! Simulation and reinforcement-learning toolkit for chemotherapy dosing
//! under partial observability.
//!
//! The crate bundles a four-compartment tumor/immune/drug ODE model wrapped
//! as an episodic environment, a small reverse-mode autodiff library, an
//! episode replay buffer, memoryless and recurrent TD3 agents, and an
//! experiment harness that drives them.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ode;
pub mod replay;

pub use error::{Error, Result};
