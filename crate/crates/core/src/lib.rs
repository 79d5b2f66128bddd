//! Discrete-event simulation of a flat fog-computing network with pluggable
//! workload placement.
//!
//! The crate contains the network model ([`topology`]), stochastic workload
//! generation ([`workload`]), the event engine ([`des`]), placement policies
//! ([`policies`]), privacy-aware state and reward construction ([`rl_state`]),
//! a small dense network ([`nn`]), the Double Deep Q-Learning agent
//! ([`ddql`]), metric aggregation ([`metrics`]) and the experiment grid
//! ([`harness`]).
//!
//! Independent episodes, grid cells and mini-batch gradient chunks run on the
//! rayon pool when the `parallel` feature is enabled (the default); see
//! [`par`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddql;
pub mod des;
mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod policies;
pub mod rl_state;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};

/// Index of a node in a [`topology::Topology`].
pub type NodeId = usize;
