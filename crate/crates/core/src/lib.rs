//! Planar dexterous grasping: a rigid-body hand/object simulator, a shaped
//! grasping reward with a convex-hull topology term, an actor-critic PPO
//! trainer written from scratch, and a lift-and-shake evaluation harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: object key points, noisy partial observation, 2-D hulls.
//! - [`dynamics`]: the floating three-finger hand, the cuboid object, penalty
//!   contacts, and the 50 Hz / 500 Hz control stack.
//! - [`reward`]: the six reward terms and their weighted sum.
//! - [`env`]: the episode wrapper (reset, step, special initial states).
//! - [`nn`]: the MLP actor and critic with manual backprop.
//! - [`ppo`]: rollouts, returns/advantages, clipped-surrogate updates.
//! - [`eval`]: task scenarios, lift/shake tests, ablations.
//! - [`config`]: the flat JSON run configuration.

pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod ppo;
pub mod reward;

pub use error::{Error, Result};

/// 2-D vector in metres (world or hand frame).
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3-D vector in metres.
pub type Vec3 = nalgebra::Vector3<f64>;
