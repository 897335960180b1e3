//! Simulator for federated conditional-GAN training in which each client
//! publishes only its discriminator and the noise/label batch of every step,
//! while the server rebuilds a seed-synchronized twin of the client generator.

pub mod attacker;
pub mod channel;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nnkernel;
pub mod protocol;

pub use error::{Error, Result};
