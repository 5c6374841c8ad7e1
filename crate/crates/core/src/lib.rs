//! Federated linear contextual bandits with fairness of exposure.
//!
//! Agents learn a shared linear reward model while playing randomized
//! policies whose arm probabilities are proportional to a merit function of
//! the estimated reward. Each agent keeps ridge-regression statistics,
//! picks an optimistic parameter from its confidence ellipsoid by projected
//! gradient ascent and periodically pools its statistics with the others,
//! optionally through a tree-based differentially private release.
//!
//! Module overview:
//!
//! - [`numkit`]: symmetric matrices, Cholesky factors, weighted norms.
//! - [`environment`]: synthetic instances, contexts and rewards.
//! - [`fairness`]: merit functions, fair policies and regret.
//! - [`optimizer`]: optimistic parameter search over an ellipsoid.
//! - [`agent`]: one learner and its confidence schedule.
//! - [`federation`]: the multi-agent round loop and sync schedules.
//! - [`privatizer`]: the binary-tree noise mechanism.
//! - [`harness`]: experiments, aggregation, CSV output and the CLI.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod environment;
pub mod error;
pub mod fairness;
pub mod federation;
pub mod harness;
pub mod numkit;
pub mod optimizer;
pub mod privatizer;
pub mod rng;

pub use agent::{AccuracyTriple, AgentState, BetaSchedule};
pub use environment::{gen_instance, ContextSet, Instance, NormMode};
pub use error::{Error, Result};
pub use fairness::{construct_policy, MeritFn, Policy};
pub use federation::{run_federation, Federation, FederationConfig, SyncProtocol};
pub use harness::{run_experiment, ExpId, ExperimentConfig, RunSummary, Scale, Variant};
pub use numkit::{SpdFactor, SymMat, Vector};
pub use optimizer::{optimistic_theta, Ellipsoid, PgdConfig};
pub use privatizer::{privatize, NoiseTree, PrivacyParams};
