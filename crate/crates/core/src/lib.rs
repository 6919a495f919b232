//! Continual test-time adaptation that keeps the pairwise angular structure
//! of pre-trained weights intact.
//!
//! Each adapted linear layer is split into per-neuron magnitudes and unit
//! directions. The directions are only ever rotated together by a learnable
//! Householder chain, so every angle between neurons survives adaptation.
//! Only the magnitudes and the chain vectors learn, from an unsupervised
//! loss that pulls target feature statistics back to the source's.
//!
//! - [`numkit`]: dense matrices, seeded randomness, finite differences.
//! - [`geometry`]: magnitude/direction split and the ΔM, ΔA, ΔS metrics.
//! - [`householder`]: reflection chains and their gradients.
//! - [`paidlayer`]: the adapted linear layer and its six update modes.
//! - [`nnmodel`]: a small transformer (or MLP) with hand-written backward.
//! - [`adapt`]: alignment loss, AdamW and the online streaming engine.
//! - [`bench`]: synthetic source data, corruptions and domain streams.
//! - [`cli`]: configs, checkpoints, reports and the command drivers.
//! - [`gradcheck`]: the finite-difference suite behind `paid gradcheck`.

pub mod adapt;
pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod householder;
pub mod nnmodel;
pub mod numkit;
pub mod paidlayer;

pub use error::{PaidError, Result};
