#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Introspective variational autoencoders on 2D toy data.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffmath`]: a small reverse-mode autodiff tape over dense `f64` matrices.
//! - [`gaussian`]: closed-form diagonal-Gaussian math (KL terms, the
//!   density-overlap kernel and the adversarial similarity distance).
//! - [`nets`]: encoder/decoder MLPs and their checkpoint format.
//! - [`objectives`]: the VAE, IntroVAE, S-IntroVAE and AS-IntroVAE losses.
//! - [`toydata`]: seeded samplers for the 8-Gaussians and checkerboard toys.
//! - [`eval`]: histogram KL/JSD, mode coverage and the JSD saturation sweep.
//! - [`trainer`]: the alternating encoder/decoder loop with Adam and EMA.

pub mod diffmath;
pub mod eval;
pub mod gaussian;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod toydata;
pub mod trainer;

pub use diffmath::{DiffError, Gradients, Matrix, Op, Tape, Value};
pub use gaussian::{DiagonalGaussian, GaussianError, PosteriorBatch};
pub use nets::{Checkpoint, NetParams, NetSpec};
pub use objectives::{LossPair, Method, ObjectiveConfig, Phase};
pub use toydata::{ModeSet, ToyKind, ToySpec};
pub use trainer::{Combo, RunArtifacts, TrainConfig};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
