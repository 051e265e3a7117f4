//! Learning stack over the project-network core: a minimal reverse-mode
//! autodiff engine on dense matrices, a relation-typed message-passing
//! network with heteroscedastic duration/cost heads (plus a GRU-memory
//! temporal variant), composite losses with a differentiable soft makespan,
//! an Adam training loop with neighbor sampling, ridge/MLP baselines, and
//! the active-measurement and rolling-execution experiment drivers.

pub mod active;
pub mod baselines;
pub mod gnn;
pub mod loss;
pub mod prep;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use gnn::{ModelConfig, ModelParams, PredictionSet};
pub use prep::PreparedInstance;
pub use tensor::{Matrix, Tape, TensorId};
pub use train::TrainConfig;
