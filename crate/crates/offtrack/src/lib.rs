//! Off-road trajectory tracking at desk scale.
//!
//! This crate builds the full pipeline for waypoint-tracking control of a
//! differential-drive vehicle:
//!
//! * [`trajectory`] — waypoint tracks, crosstrack geometry, synthetic tracks;
//! * [`vehicle`] — ideal unicycle kinematics and a surrogate vehicle with
//!   hidden gain / lag / delay / slip / noise dynamics;
//! * [`env`] — a gym-style tracking environment over the 10 upcoming
//!   waypoints;
//! * [`net`] — a small Gaussian policy/value network with hand-rolled
//!   analytic backpropagation and JSON checkpoints;
//! * [`ppo`] — proximal policy optimization on the ideal simulator;
//! * [`adapt`] — supervised adaptation of the trained policy from limited
//!   drive data collected on the surrogate, with crosstrack-based epoch
//!   selection;
//! * [`ilqr`] — an iterative LQR tracking baseline on the kinematic model;
//! * [`metrics`] — trajectory logs and crosstrack summary metrics;
//! * [`pipeline`] — end-to-end experiment orchestration with resumable
//!   stages and deterministic seeding.
//!
//! The narrative guide in `book/` walks through each concept with runnable
//! snippets; those snippets are compiled and run as doc-tests of this crate.

pub mod adapt;
pub mod env;
pub mod eval;
pub mod ilqr;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod ppo;
pub mod trajectory;
pub mod vehicle;

#[cfg(doctest)]
mod book;
