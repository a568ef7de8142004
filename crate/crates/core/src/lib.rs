//! Domain adaptation under label shift by aligning class-conditional
//! sub-domains.
//!
//! The crate is organised around five pieces:
//!
//! - [`ot`]: exact and entropic optimal transport, Gaussian closed forms and
//!   the mixture distance between Gaussian mixtures.
//! - [`bounds`]: empirical estimators for the overall and sub-domain
//!   generalization bounds, and the comparator report between them.
//! - [`nn`]: small dense networks with exact gradients, the four training
//!   losses and SGD with momentum.
//! - [`darsa`]: the training driver (pretraining, target weight estimation,
//!   the three-group update loop and prediction).
//! - [`synthdata`]: seeded generators for shifted-class-distribution tasks.

pub mod bounds;
pub mod darsa;
mod error;
pub mod nn;
pub mod ot;
pub mod synthdata;

pub use bounds::{BoundReport, ClassWeights, SubdomainPartition};
pub use error::{Error, Result};
pub use synthdata::Dataset;
pub use ot::{GaussianComponent, GaussianMixture, SinkhornParams, TransportPlan};

