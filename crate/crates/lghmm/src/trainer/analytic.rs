//! Sampling-free trainer: factor matrices from midpoint-rule integration.
//!
//! Every interior entry of a factor matrix is the one-point midpoint
//! approximation of the Gaussian cell integral (predictor density times
//! noise density over the cell rectangle).  Tail rows receive the residual
//! one-sided Gaussian mass so each column still accounts for a full
//! distribution, and tail columns — whose predictor interval would be
//! unbounded — use the one-width pseudo-cells just outside the grid range.
//! The full matrices are Khatri-Rao products of the factors, exactly as in
//! the column-shift trainer; only the per-column source differs.

use crate::analytic::{gauss_pdf, midpoint_psi, normal_cdf, GaussKernelSpec, Rect};
use crate::error::Result;
use crate::lgss::{SsmModel, SteadyStateStats};
use crate::model::HmmModel;
use crate::quantizer::{AxisGrid, QuantizerGrid};
use crate::sparse::SparseColMat;

use super::{TrainBudget, Trainer};

/// Analytic state factor `A^p`: `N_p x N`, columns normalized.
pub fn analytic_state_factor(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
    axis: usize,
) -> Result<SparseColMat> {
    build_factor(
        grid,
        &model.state_matrix().row(axis).transpose().iter().copied().collect::<Vec<_>>(),
        stats.predictor_state_std[axis],
        model.process_noise_std()[axis],
        &grid.state_axes()[axis].clone(),
    )
}

/// Analytic output factor `C^p`: `M_p x N`, columns normalized.
pub fn analytic_measurement_factor(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
    axis: usize,
) -> Result<SparseColMat> {
    build_factor(
        grid,
        &model.output_matrix().row(axis).transpose().iter().copied().collect::<Vec<_>>(),
        stats.predictor_output_std[axis],
        model.measurement_noise_std()[axis],
        &grid.output_axes()[axis].clone(),
    )
}

fn build_factor(
    grid: &QuantizerGrid,
    row: &[f64],
    predictor_std: f64,
    noise_std: f64,
    out_axis: &AxisGrid,
) -> Result<SparseColMat> {
    let n = grid.state_count();
    let rows = out_axis.cardinality();
    // The predictor std only scales columns by a constant that normalization
    // removes; substitute 1.0 when the predictor is degenerate (zero row).
    let pred_std = if predictor_std > 1e-150 { predictor_std } else { 1.0 };
    let kernel = GaussKernelSpec::new(pred_std, noise_std.max(1e-150))?;

    let mut mat = SparseColMat::zeros(rows, n);
    let state_axes = grid.state_axes();
    for j in 1..=n {
        let idx = grid.state_axis_indices(j)?;
        // interval image of the (tail-clamped) cell box under the row vector
        let mut alpha_lo = 0.0;
        let mut alpha_hi = 0.0;
        for ((&i, axis), &coef) in idx.iter().zip(state_axes).zip(row) {
            let (lo, hi) = axis.clamped_bounds(i);
            let (a, b) = (coef * lo, coef * hi);
            alpha_lo += a.min(b);
            alpha_hi += a.max(b);
        }
        if alpha_hi - alpha_lo < 1e-300 {
            // degenerate predictor interval (zero row): widen symmetrically
            alpha_lo -= 0.5;
            alpha_hi += 0.5;
        }
        let alpha_mid = 0.5 * (alpha_lo + alpha_hi);
        let alpha_width = alpha_hi - alpha_lo;
        let common = alpha_width * gauss_pdf(alpha_mid, pred_std);

        let mut col = Vec::new();
        let mut interior_sum = 0.0;
        for i in 2..rows {
            let (lo, hi) = out_axis.cell_bounds(i);
            let rect = Rect::new(alpha_lo, alpha_hi, lo, hi)?;
            let v = midpoint_psi(&kernel, &rect);
            if v > 0.0 {
                col.push((i as u32 - 1, v));
                interior_sum += v;
            }
        }
        // tail rows: one-sided residual mass at the predictor midpoint,
        // expressed on the same scale as the interior midpoint entries
        let lower_tail = normal_cdf((out_axis.lower() - alpha_mid) / kernel.noise_std);
        let upper_tail = 1.0 - normal_cdf((out_axis.upper() - alpha_mid) / kernel.noise_std);
        if common > 0.0 {
            if lower_tail > 0.0 {
                col.push((0, common * lower_tail));
            }
            if upper_tail > 0.0 {
                col.push(((rows - 1) as u32, common * upper_tail));
            }
        } else if interior_sum == 0.0 {
            // predictor so far out that everything underflowed: put the mass
            // in the nearer tail row
            let target = if alpha_mid < out_axis.lower() { 0 } else { rows - 1 };
            col.push((target as u32, 1.0));
        }
        mat.set_column(j - 1, col);
    }
    mat.normalize_columns();
    Ok(mat)
}

/// All analytic state factors.
pub fn analytic_state_factors(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
) -> Result<Vec<SparseColMat>> {
    (0..model.n()).map(|p| analytic_state_factor(model, stats, grid, p)).collect()
}

/// All analytic output factors.
pub fn analytic_measurement_factors(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
) -> Result<Vec<SparseColMat>> {
    (0..model.m()).map(|p| analytic_measurement_factor(model, stats, grid, p)).collect()
}

/// Compose the analytic model: factors, Khatri-Rao products, normalization.
pub fn train_analytic(
    model: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
) -> Result<HmmModel> {
    let state_factors = analytic_state_factors(model, stats, grid)?;
    let meas_factors = analytic_measurement_factors(model, stats, grid)?;
    let transition = SparseColMat::khatri_rao(&state_factors)?;
    let measurement = SparseColMat::khatri_rao(&meas_factors)?;
    HmmModel::from_raw(transition, measurement)?.with_factors(state_factors, meas_factors)
}

/// Registry entry for the integration-based strategy (budget and seed unused).
pub struct AnalyticTrainer;

impl Trainer for AnalyticTrainer {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn description(&self) -> &'static str {
        "closed-form midpoint integration of the Gaussian cell probabilities"
    }

    fn train(
        &self,
        model: &SsmModel,
        stats: &SteadyStateStats,
        grid: &QuantizerGrid,
        _budget: &TrainBudget,
        seed: u64,
    ) -> Result<HmmModel> {
        let _ = seed;
        train_analytic(model, stats, grid)
    }
}
