//! Latent-space Markov-chain sampling for GAN generators.
//!
//! The latent chain `z_k` is paired with the sample chain `x_k = G(z_k)`;
//! proposals are drawn in latent space (independently from the prior, or by
//! a Langevin step driven by the discriminator) and corrected with an
//! acceptance test that needs only the latent prior, the latent proposal
//! density and discriminator scores.

pub mod calibration;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
