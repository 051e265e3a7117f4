//! Core substrate for resource-based project time/cost prediction:
//! typed project DAGs with CPM scheduling, a stochastic resource-efficiency
//! model with Monte Carlo propagation and a time-cost frontier solver,
//! a synthetic instance generator, dataset ingestion (canonical JSON,
//! PSPLIB `.sm`, tabular CSV), online Bayesian efficiency updates, and
//! accuracy/calibration metrics.

pub mod bayes;
pub mod graph;
pub mod ingest;
pub mod instance;
pub mod linalg;
pub mod metrics;
pub mod rbm;
pub mod rng;
pub mod synthgen;

pub use graph::{ProjectGraph, Relation, Schedule};
pub use instance::ProjectInstance;
pub use rng::StreamRng;
