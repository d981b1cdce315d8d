//! HMM training strategies behind a common trait.
//!
//! Three interchangeable learners produce an [`HmmModel`] from the same
//! `(SsmModel, QuantizerGrid)` pair:
//!
//! * `"naive"` — exhaustive Monte Carlo event counting over long stationary
//!   simulations ([`naive::NaiveTrainer`]);
//! * `"structured"` — the reduced-complexity column-shift learner that trains
//!   one standard column per factor matrix and replicates the rest
//!   ([`structured::StructuredTrainer`]);
//! * `"analytic"` — midpoint-rule integration of the closed-form Gaussian
//!   cell probabilities, no sampling at all ([`analytic::AnalyticTrainer`]).
//!
//! Strategies are looked up by name at runtime ([`TrainerRegistry`]), which
//! is how the CLI and experiment configs select them.

pub mod analytic;
pub mod naive;
pub mod structured;

use crate::error::{Error, Result};
use crate::lgss::{SsmModel, SteadyStateStats};
use crate::model::HmmModel;
use crate::quantizer::QuantizerGrid;

/// Sampling budget handed to a trainer.
///
/// `loops` independent simulations are run and merged; `chunk` is the number
/// of samples per loop where the strategy uses one (the column-shift trainer
/// has a fixed two-step chunk and ignores it, the analytic trainer ignores
/// both).
#[derive(Debug, Clone, Copy)]
pub struct TrainBudget {
    pub loops: usize,
    pub chunk: usize,
}

/// A named, interchangeable HMM learning strategy.
pub trait Trainer: Send + Sync {
    /// Registry key, e.g. `"naive"`.
    fn name(&self) -> &'static str;

    /// One-line human description for `--help` style listings.
    fn description(&self) -> &'static str;

    /// Learn transition and emission matrices on `grid`.
    fn train(
        &self,
        model: &SsmModel,
        stats: &SteadyStateStats,
        grid: &QuantizerGrid,
        budget: &TrainBudget,
        seed: u64,
    ) -> Result<HmmModel>;
}

/// Name-keyed collection of trainers.
pub struct TrainerRegistry {
    entries: Vec<Box<dyn Trainer>>,
}

impl TrainerRegistry {
    /// Registry holding the three built-in strategies.
    pub fn builtin() -> Self {
        let mut reg = Self { entries: Vec::new() };
        reg.register(Box::new(naive::NaiveTrainer));
        reg.register(Box::new(structured::StructuredTrainer));
        reg.register(Box::new(analytic::AnalyticTrainer));
        reg
    }

    pub fn register(&mut self, trainer: Box<dyn Trainer>) {
        self.entries.retain(|t| t.name() != trainer.name());
        self.entries.push(trainer);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Trainer> {
        self.entries.iter().find(|t| t.name() == name).map(AsRef::as_ref)
    }

    /// Like [`Self::get`] but with an error listing the known names.
    pub fn require(&self, name: &str) -> Result<&dyn Trainer> {
        self.get(name).ok_or_else(|| {
            Error::Config(format!("unknown trainer '{name}', expected one of: {}", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|t| t.name()).collect()
    }
}

impl std::fmt::Debug for TrainerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainerRegistry").field("names", &self.names()).finish()
    }
}
