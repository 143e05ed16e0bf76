//! Neuron pruning as the equilibrium of a participation game.
//!
//! Every hidden neuron of an MLP owns a gate `s_i in [0, 1]` that scales its
//! output. Training alternates gradient descent on the weights with projected
//! gradient ascent of each gate on its own utility (benefit minus L2, L1 and
//! competition costs). Gates whose best response is zero collapse during
//! training, and anything left below `epsilon` is pruned at the end.
//!
//! Modules, bottom-up:
//!
//! - [`numkit`]: dense matrices and the seeded RNG.
//! - [`mnist`]: IDX parsing and mini-batching.
//! - [`net`]: the gated MLP and its manual backward pass.
//! - [`game`]: utilities, best responses, dominance and equilibrium residuals.
//! - [`trainer`]: the joint training loop and final pruning.
//! - [`verify`]: independent oracles used by the tests and `eqprune verify`.
//! - [`config`], [`checkpoint`], [`experiment`]: run configuration, model
//!   files and the on-disk output layout.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod game;
pub mod mnist;
pub mod net;
pub mod numkit;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use game::{BenefitMode, GameConfig, ParticipationState, PlayerStat, PlayerStats};
pub use mnist::{Dataset, MnistPaths};
pub use net::{Architecture, BenefitGradient, GradientBundle, ParticipatingNet, PlayerId};
pub use numkit::{Matrix, Rng};
pub use trainer::{EpochMetrics, RunSummary, TrainConfig, TrainOutcome};
