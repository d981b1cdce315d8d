//! HMM belief filter with event-aware no-data updates.
//!
//! State is a probability vector over the `N` composite cells.  Each step
//! predicts through the transition matrix and then reweights by the
//! likelihood of what the channel produced:
//!
//! * packet received (`gamma = 1`): the measurement is quantized to its
//!   composite cell `i` and the belief is reweighted by row `i` of `C`;
//! * nothing received: the step was either not triggered (output inside the
//!   delta-ball around the estimator's reference) or triggered and dropped.
//!   With `T` the set of output cells whose centers sit inside that ball,
//!   total probability over the two cases gives the likelihood
//!   `sum_{i in T} c_ij + (1 - lambda) * sum_{i not in T} c_ij`.
//!
//! Columns of `A` or `C` left untrained carry no information and act as
//! uniform distributions.  If an update annihilates the belief (a received
//! measurement impossible under every live state), the filter resets to
//! uniform and counts the event.  Entries below `PRUNE_REL` of the maximum
//! are dropped after each step; this keeps the live set small and costs
//! less mass per step than one rounding error.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::ChannelEvent;
use crate::lgss::SteadyStateStats;
use crate::model::HmmModel;
use crate::quantizer::QuantizerGrid;

/// Relative floor under which belief entries are zeroed after normalization.
const PRUNE_REL: f64 = 1e-15;

/// A probability vector over the HMM's composite state cells.
#[derive(Debug, Clone)]
pub struct BeliefVector {
    probs: Vec<f64>,
}

impl BeliefVector {
    /// Uniform belief over `n` states.
    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    /// Unit mass on the cell containing a known state.
    pub fn from_known_state(grid: &QuantizerGrid, x: &DVector<f64>) -> Result<Self> {
        let mut probs = vec![0.0; grid.state_count()];
        probs[grid.quantize_state(x)? - 1] = 1.0;
        Ok(Self { probs })
    }

    /// Stationary cell distribution: the `N(0, P)` density at each cell's
    /// representative point, normalized.
    pub fn stationary(stats: &SteadyStateStats, grid: &QuantizerGrid) -> Result<Self> {
        let p_inv = stats.state_cov.clone().try_inverse().ok_or_else(|| {
            Error::InvalidModel("stationary covariance is singular".into())
        })?;
        let n = grid.state_count();
        let mut probs = vec![0.0; n];
        for j in 1..=n {
            let c = grid.state_cell_center(j)?;
            probs[j - 1] = (-0.5 * (p_inv.clone() * &c).dot(&c)).exp();
        }
        let total: f64 = probs.iter().sum();
        for v in &mut probs {
            *v /= total;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Posterior-mean state reconstruction over cell representative points.
pub fn hmm_point_estimate(belief: &BeliefVector, grid: &QuantizerGrid) -> Result<DVector<f64>> {
    if belief.len() != grid.state_count() {
        return Err(Error::Dimension(format!(
            "belief has {} entries for {} cells",
            belief.len(),
            grid.state_count()
        )));
    }
    let n = grid.state_axes().len();
    let mut out = DVector::zeros(n);
    for (j, &b) in belief.probs().iter().enumerate() {
        if b != 0.0 {
            out += b * grid.state_cell_center(j + 1)?;
        }
    }
    Ok(out)
}

/// Precomputed filter context for one `(model, grid, delta, lambda)` tuple.
pub struct HmmFilter<'a> {
    model: &'a HmmModel,
    grid: &'a QuantizerGrid,
    delta: f64,
    lambda: f64,
    /// Row-major view of `C` for the received-measurement update.
    c_rows: Vec<Vec<(u32, f64)>>,
    /// Per-column flags: emission column carries no training mass.
    c_col_zero: Vec<bool>,
    /// 0-based transition columns with no training mass.
    a_zero_cols: Vec<usize>,
    /// Flattened cell centers, state dimension-major.
    centers: Vec<f64>,
    /// Output cell centers for the trigger-set test.
    y_centers: Vec<DVector<f64>>,
    uniform_resets: u64,
    n_dims: usize,
}

impl<'a> HmmFilter<'a> {
    pub fn new(model: &'a HmmModel, grid: &'a QuantizerGrid, delta: f64, lambda: f64) -> Result<Self> {
        if model.state_count() != grid.state_count() || model.output_count() != grid.output_count()
        {
            return Err(Error::Dimension(format!(
                "model is {}x{} but grid has {} state / {} output cells",
                model.state_count(),
                model.output_count(),
                grid.state_count(),
                grid.output_count()
            )));
        }
        if !(0.0..=1.0).contains(&lambda) || delta < 0.0 {
            return Err(Error::Config(format!("bad channel parameters delta={delta} lambda={lambda}")));
        }
        let n = model.state_count();
        let mut c_col_zero = vec![false; n];
        for &j in model.unvisited_measurement_cols() {
            c_col_zero[j - 1] = true;
        }
        let a_zero_cols: Vec<usize> =
            model.unvisited_transition_cols().iter().map(|&j| j - 1).collect();
        let n_dims = grid.state_axes().len();
        let mut centers = vec![0.0; n * n_dims];
        for j in 0..n {
            let c = grid.state_cell_center(j + 1)?;
            for d in 0..n_dims {
                centers[j * n_dims + d] = c[d];
            }
        }
        let y_centers = (1..=grid.output_count())
            .map(|i| grid.output_cell_center(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            grid,
            delta,
            lambda,
            c_rows: model.measurement().to_rows(),
            c_col_zero,
            a_zero_cols,
            centers,
            y_centers,
            uniform_resets: 0,
            n_dims,
        })
    }

    /// Times the belief collapsed to zero mass and was reset to uniform.
    pub fn uniform_resets(&self) -> u64 {
        self.uniform_resets
    }

    pub fn grid(&self) -> &QuantizerGrid {
        self.grid
    }

    /// One predict + update cycle.
    ///
    /// `last_received_y` is the estimator's own reference output (the last
    /// payload it received), used to reconstruct the sensor's silence region.
    pub fn step(
        &mut self,
        belief: &BeliefVector,
        event: &ChannelEvent,
        last_received_y: &DVector<f64>,
    ) -> Result<BeliefVector> {
        let n = self.model.state_count();
        if belief.len() != n {
            return Err(Error::Dimension(format!("belief length {} != {}", belief.len(), n)));
        }
        // predict: pi_bar = A * belief, untrained columns spreading uniformly
        let mut predicted = vec![0.0; n];
        self.model.transition().accumulate_matvec(belief.probs(), &mut predicted);
        let dead_mass: f64 = self.a_zero_cols.iter().map(|&j| belief.probs()[j]).sum();
        if dead_mass > 0.0 {
            let fill = dead_mass / n as f64;
            for v in &mut predicted {
                *v += fill;
            }
        }

        // update
        let m = self.model.output_count();
        let mut posterior = predicted;
        if event.gamma {
            let y = event.payload.as_ref().expect("gamma implies payload");
            let i = self.grid.quantize_output(y)?;
            let mut updated = vec![0.0; n];
            for &(j, c) in &self.c_rows[i - 1] {
                updated[j as usize] = c * posterior[j as usize];
            }
            let uniform_like = 1.0 / m as f64;
            for (j, &zero) in self.c_col_zero.iter().enumerate() {
                if zero && posterior[j] != 0.0 {
                    updated[j] = uniform_like * posterior[j];
                }
            }
            posterior = updated;
        } else {
            // silence: inside-ball output cells (not triggered) have
            // likelihood 1, outside-ball cells were triggered and lost
            // with probability 1 - lambda
            let mut in_ball = vec![false; m];
            let mut ball_count = 0usize;
            for (i, c) in self.y_centers.iter().enumerate() {
                if (c - last_received_y).norm() < self.delta {
                    in_ball[i] = true;
                    ball_count += 1;
                }
            }
            let uniform_st = ball_count as f64 / m as f64;
            for (j, v) in posterior.iter_mut().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                let s_t = if self.c_col_zero[j] {
                    uniform_st
                } else {
                    self.model
                        .measurement()
                        .column(j)
                        .iter()
                        .filter(|&&(i, _)| in_ball[i as usize])
                        .map(|&(_, c)| c)
                        .sum()
                };
                *v *= (1.0 - self.lambda) + self.lambda * s_t;
            }
        }

        // renormalize, reset on annihilation, prune dust
        let total: f64 = posterior.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            self.uniform_resets += 1;
            return Ok(BeliefVector::uniform(n));
        }
        let mut max = 0.0f64;
        for v in &mut posterior {
            *v /= total;
            max = max.max(*v);
        }
        let floor = max * PRUNE_REL;
        let mut kept = 0.0;
        for v in &mut posterior {
            if *v < floor {
                *v = 0.0;
            } else {
                kept += *v;
            }
        }
        for v in &mut posterior {
            *v /= kept;
        }
        Ok(BeliefVector { probs: posterior })
    }

    /// Posterior mean using the precomputed center table.
    pub fn point_estimate(&self, belief: &BeliefVector) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_dims);
        for (j, &b) in belief.probs().iter().enumerate() {
            if b != 0.0 {
                for d in 0..self.n_dims {
                    out[d] += b * self.centers[j * self.n_dims + d];
                }
            }
        }
        out
    }
}
