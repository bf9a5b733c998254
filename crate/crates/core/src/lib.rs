//! Ideal-observer likelihood-ratio estimation by Markov-chain Monte Carlo.
//!
//! Binary detection tasks `g = b + n` versus `g = b + s + n` are scored with
//! the likelihood ratio, estimated by averaging background-known-exactly
//! ratios over posterior samples of the background. Backgrounds are drawn
//! either from a lumpy object model directly, or through the latent space of
//! a generator `b = G(z)`.
//!
//! Module map:
//!
//! * [`image`], [`seed`]: grids, images, `IOIMG1` files, reproducible streams.
//! * [`imaging`]: Gaussian point response, closed-form blob measurement, noise.
//! * [`lumpy`], [`signal`]: object and signal models.
//! * [`mcmc`]: Metropolis–Hastings engine, random-walk and Langevin kernels.
//! * [`generator`]: generator trait, analytic lumpy generator, dense networks.
//! * [`estimators`]: likelihood-ratio kernels and the four chain estimators.
//! * [`roc`]: empirical ROC, AUC and bootstrap intervals.
//! * [`experiment`]: datasets, configuration and the end-to-end runner.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod generator;
pub mod image;
pub mod imaging;
pub mod lumpy;
pub mod mcmc;
pub mod roc;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};
pub use estimators::{
    estimate_log_lr_conventional, estimate_log_lr_gan, log_lambda_bke, DetectionTask, LatentKernel, ObjectModel,
    SignalSpec,
};
pub use generator::{Generator, GeneratorSpec, LatentPrior, LatentPriorKind};
pub use image::{image_read, image_write, Grid, Image};
pub use imaging::{GaussBlob, GaussianNoise, PsfParams};
pub use lumpy::{LumpCount, LumpyModel, LumpyParams, LumpyPrior, LumpyProposalCfg};
pub use mcmc::{run_chain, ChainConfig, ChainResult, Proposal};
pub use roc::{bootstrap_auc_ci, empirical_auc, roc_points, ScoreSet};
pub use seed::{SeedSpec, Stream};
pub use signal::{SignalParams, SkeSignalCfg, SksPrior};
