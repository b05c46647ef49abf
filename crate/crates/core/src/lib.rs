//! Federated learning with weighted Tsetlin Machines and confidence-based
//! client clustering.
//!
//! Clients train a multiclass weighted Tsetlin Machine on local data, score
//! how confident each class bank is on a held-out confidence set, and upload
//! only the clause-weight vector of their most confident class. The
//! aggregator forms one cluster per uploaded class, averages within each
//! cluster and sends the mean back to the cluster's members.
//!
//! Modules:
//! - [`dataset`]: IDX loading, booleanization, per-client datasets
//! - [`partition`]: Dirichlet label-skew partitioning, experiment plans
//! - [`tm`]: the Tsetlin Machine
//! - [`federation`]: round orchestration and aggregation strategies
//! - [`metrics`]: communication accounting and report files
//! - [`config`] / [`runner`]: run configuration and end-to-end execution

pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod federation;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod runner;
pub mod tm;

pub use error::{Error, Result};
