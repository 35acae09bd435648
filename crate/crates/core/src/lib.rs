//! Distributed stochastic MPC for networks of coupled linear subsystems.
//!
//! Nominal trajectories are planned with indirect feedback (the measured
//! state only enters the cost), while chance constraints are handled by
//! tightening computed offline from sampled error trajectories.

pub mod disturbance;
pub mod error_sim;
pub mod harness;
pub mod mpc;
pub mod network;
pub mod solver;
pub mod tightening;
