//! Interaction-aware car-following toolkit: core numerics.
//!
//! Quantifies leader-follower interaction intensity as a divergence between
//! a conditional and a marginal Gaussian-mixture behavior model, and uses it
//! to switch between interactive and non-interactive IDM policies.
//!
//! The crate is `no_std` + `alloc`; all IO, file formats, and the CLI live in
//! the companion `iacf-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod error;
pub mod gmm;
pub mod idm;
pub mod interaction;
pub mod rng;
pub mod sim;
pub mod switching;
pub mod synth;
pub mod traj;
pub mod transport;

pub use error::CoreError;
