//! Finite-state HMM approximations of stable linear Gaussian systems.
//!
//! The pipeline: a stable state-space model ([`lgss::SsmModel`]) acts as a
//! training emulator; per-axis quantization grids ([`quantizer`]) map its
//! real-valued states and outputs onto finite index sets; interchangeable
//! trainers ([`trainer`]) learn the column-stochastic transition and
//! emission matrices of the resulting hidden Markov model ([`model`]); and
//! the learned models drive a belief filter that is compared against a
//! Kalman filter with intermittent observations in event-triggered remote
//! estimation experiments ([`estimators`], [`experiments`]).
//!
//! Three trainers are registered by name (select via config or CLI):
//!
//! * `naive` — exhaustive Monte Carlo event counting;
//! * `structured` — reduced-complexity column-shift training (one standard
//!   column per factor matrix, the rest replicated by integer shifts and
//!   composed by Khatri-Rao products);
//! * `analytic` — sampling-free midpoint integration of the closed-form
//!   Gaussian cell probabilities ([`analytic`]).

pub mod analytic;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod lgss;
pub mod model;
pub mod quantizer;
pub mod rng;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
pub use lgss::{SsmModel, SteadyStateStats, Trajectory};
pub use model::HmmModel;
pub use quantizer::{AxisGrid, QuantizerGrid};
pub use trainer::{TrainBudget, Trainer, TrainerRegistry};
