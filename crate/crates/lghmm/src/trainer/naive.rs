//! Exhaustive Monte Carlo trainer: count events, normalize columns.
//!
//! Runs `loops` independent stationary simulations of `chunk` samples each,
//! counts emission events `(pi_y(k), pi_x(k))` and transition events
//! `(pi_x(k+1), pi_x(k))`, merges the integer counts across loops, and
//! normalizes each column at the very end.  Merging before normalization
//! keeps the estimate exactly the pooled empirical frequency regardless of
//! loop sizes; counts merge associatively, so the loops run in parallel and
//! fold together deterministically.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lgss::{sample_zero_mean, SsmModel, SteadyStateStats};
use crate::model::HmmModel;
use crate::quantizer::QuantizerGrid;
use crate::rng::GaussianStream;
use crate::sparse::{CountMatrix, SparseColMat};

use super::{TrainBudget, Trainer};

/// Count transition and emission events from a quantized index-pair stream.
///
/// Emission counts land at `(pi_y(k), pi_x(k))` for every sample, transition
/// counts at `(pi_x(k+1), pi_x(k))` for every consecutive pair.  Indices in
/// `pairs` are 1-based composites.
pub fn accumulate_counts(
    pairs: &[(usize, usize)],
    state_count: usize,
    output_count: usize,
) -> (CountMatrix, CountMatrix) {
    let mut a = CountMatrix::new(state_count, state_count);
    let mut c = CountMatrix::new(output_count, state_count);
    accumulate_counts_into(pairs, &mut a, &mut c);
    (a, c)
}

fn accumulate_counts_into(pairs: &[(usize, usize)], a: &mut CountMatrix, c: &mut CountMatrix) {
    for &(px, py) in pairs {
        c.increment(py - 1, px - 1);
    }
    for w in pairs.windows(2) {
        a.increment(w[1].0 - 1, w[0].0 - 1);
    }
}

/// Column-normalize pooled counts into a model.  Never-visited columns stay
/// zero and are reported on the model's diagnostics.
pub fn normalize(counts_a: &CountMatrix, counts_c: &CountMatrix) -> Result<HmmModel> {
    if counts_a.rows() != counts_a.cols() || counts_c.cols() != counts_a.cols() {
        return Err(Error::Dimension(format!(
            "count shapes inconsistent: A {}x{}, C {}x{}",
            counts_a.rows(),
            counts_a.cols(),
            counts_c.rows(),
            counts_c.cols()
        )));
    }
    HmmModel::from_raw(SparseColMat::from_counts(counts_a), SparseColMat::from_counts(counts_c))
}

/// Full naive training run; also returns the raw pooled counts (visit
/// statistics are needed by diagnostics and by the comparison tooling).
pub fn train_naive_detailed(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
    loops: usize,
    chunk: usize,
    seed: u64,
) -> Result<(HmmModel, CountMatrix, CountMatrix)> {
    if loops == 0 || chunk == 0 || loops * chunk < 2 {
        return Err(Error::Config(format!(
            "naive training needs loops * chunk >= 2 (got {loops} x {chunk})"
        )));
    }
    let n = grid.state_count();
    let m = grid.output_count();
    let (a, c) = (0..loops)
        .into_par_iter()
        .try_fold(
            || (CountMatrix::new(n, n), CountMatrix::new(m, n)),
            |(mut a, mut c), loop_idx| -> Result<_> {
                // One substream per loop: fresh noise each loop, stationary start.
                let mut stream = GaussianStream::substream(seed, loop_idx as u64);
                let x0 = sample_zero_mean(&stats.state_cov, &mut stream)?;
                let traj = model.simulate_stream(chunk - 1, x0, seed, &mut stream)?;
                let pairs = grid.quantize_trajectory(&traj)?;
                accumulate_counts_into(&pairs, &mut a, &mut c);
                Ok((a, c))
            },
        )
        .try_reduce(
            || (CountMatrix::new(n, n), CountMatrix::new(m, n)),
            |(mut a1, c1), (a2, mut c2)| {
                a1.merge(&a2);
                c2.merge(&c1);
                Ok((a1, c2))
            },
        )?;
    let model = normalize(&a, &c)?;
    Ok((model, a, c))
}

/// [`train_naive_detailed`] without the count matrices.
pub fn train_naive(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
    loops: usize,
    chunk: usize,
    seed: u64,
) -> Result<HmmModel> {
    train_naive_detailed(model, stats, grid, loops, chunk, seed).map(|(m, _, _)| m)
}

/// Registry entry for the exhaustive counting strategy.
pub struct NaiveTrainer;

impl Trainer for NaiveTrainer {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn description(&self) -> &'static str {
        "exhaustive Monte Carlo counting over stationary simulations"
    }

    fn train(
        &self,
        model: &SsmModel,
        stats: &SteadyStateStats,
        grid: &QuantizerGrid,
        budget: &TrainBudget,
        seed: u64,
    ) -> Result<HmmModel> {
        train_naive(model, stats, grid, budget.loops, budget.chunk, seed)
    }
}
