//! Joint communication scheduling, RIS phase-shift and 3D trajectory design
//! for a UAV-mounted reconfigurable intelligent surface relaying between two
//! ground nodes under an elevation-dependent LoS/NLoS channel.
//!
//! The optimizer maximizes the minimum time-averaged expected rate of the two
//! nodes by alternating over four blocks: the scheduling LP
//! ([`scheduling`]), per-slot phase design ([`phase_opt`]), and successive
//! convex approximation of the horizontal and vertical trajectory
//! ([`trajectory_opt`]). [`optimizer`] drives the loop and [`validator`]
//! holds the Monte-Carlo and brute-force oracles.

pub mod channel;
pub mod error;
pub mod optimizer;
pub mod phase_opt;
pub mod rate;
pub mod scenario;
pub mod scheduling;
pub mod trajectory;
pub mod trajectory_opt;
pub mod validator;

pub use error::{Error, Result};
pub use scenario::{initial_trajectory, Point2, Scenario};
pub use trajectory::Trajectory;

/// Independent 64-bit stream seed derived from a base seed and a stream
/// index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
