//! Optimal harvesting with impulsive capital investment: phase-plane
//! synthesis, policy rollout and necessary-condition checks.

pub mod cli;
pub mod curves;
pub mod dynamics;
pub mod model;
pub mod numeric;
pub mod policy;
pub mod verify;

pub use curves::PhasePortrait;
pub use model::{Model, ModelParams};
