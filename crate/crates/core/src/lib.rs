//! Simulation of synchronous Byzantine-robust distributed training on smooth
//! convex objectives.
//!
//! The crate provides the pieces of a parameter-server round and the
//! harnesses that check their guarantees empirically:
//!
//! - [`aggregators`]: average, coordinate-wise trimmed mean, coordinate-wise
//!   median, Krum and the Weiszfeld geometric median, each with its
//!   `c_delta` robustness coefficient.
//! - [`meta`]: the Centered Trimmed Meta Aggregator (CTMA), nearest-neighbour
//!   mixing and bucketing.
//! - [`estimators`]: SGD, worker momentum and the mu2-SGD corrected momentum
//!   with Anytime averaging.
//! - [`problems`]: heterogeneous quadratic and softmax-regression problems
//!   with computable constants.
//! - [`attacks`]: sign-flip, label-flip, "a little is enough" and
//!   "fall of empires".
//! - [`engine`]: the training loop and its CSV trace format.
//! - [`harness`]: Monte-Carlo robustness checks, variance probes, learning
//!   rate sweeps and cost benchmarks.
//! - [`config`] and [`cli`]: the experiment file format and the batch front end.
//!
//! Runnable tours of each capability live in `examples/`.

pub mod aggregators;
pub mod attacks;
pub mod cli;
pub mod config;
pub mod context;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod feasible;
pub mod harness;
pub mod meta;
pub mod problems;
pub mod rng;
pub mod vector;

pub use aggregators::{AggregatorKind, AggregatorSpec};
pub use context::RoundContext;
pub use error::{Error, Result};
pub use estimators::{AlphaSchedule, BetaSchedule, EstimatorConfig, EstimatorKind};
pub use feasible::FeasibleSet;
pub use meta::{MetaKind, MetaSpec, RobustnessBound};
pub use rng::{seeded_rng, RandomStream};
pub use vector::WorkerVector;
