//! Quantization grids mapping real state/output vectors to finite index sets.
//!
//! Each axis `p` covers `[-rho * sigma_p, +rho * sigma_p]` with `card - 2`
//! equal sub-intervals of width `h_p`, plus two infinite tail cells, for
//! `card` cells total.  A vector's per-axis cell indices combine into one
//! composite index `1..=prod(card_p)` in lexicographic order (first axis most
//! significant), which is exactly the position of the Kronecker product of
//! the per-axis unit vectors.
//!
//! Conventions fixed here and used everywhere else:
//! * indices are 1-based at every public interface;
//! * a value exactly on a cell boundary goes to the lower-indexed cell;
//! * tail cells report pseudo-centers half a width beyond the finite range.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lgss::{SteadyStateStats, Trajectory};

/// One axis of the quantizer: `card` cells over `[lower, upper]` plus tails.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisGrid {
    cardinality: usize,
    lower: f64,
    upper: f64,
    width: f64,
}

impl AxisGrid {
    /// Grid with `cardinality >= 3` cells spanning `[lower, upper]`.
    pub fn new(cardinality: usize, lower: f64, upper: f64) -> Result<Self> {
        if cardinality < 3 {
            return Err(Error::Quantizer(format!(
                "cardinality must be at least 3 (got {cardinality}): no interior cells"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Quantizer(format!("invalid axis range [{lower}, {upper}]")));
        }
        let width = (upper - lower) / (cardinality - 2) as f64;
        Ok(Self { cardinality, lower, upper, width })
    }

    /// Grid spanning `[-rho * sigma, +rho * sigma]`.
    pub fn from_std(sigma: f64, rho: f64, cardinality: usize) -> Result<Self> {
        if !(sigma > 0.0 && rho > 0.0) {
            return Err(Error::Quantizer(format!(
                "axis std and rho must be positive (sigma={sigma}, rho={rho})"
            )));
        }
        Self::new(cardinality, -rho * sigma, rho * sigma)
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Cell index (1-based) of `value`.
    ///
    /// Constant-time arithmetic: `1 + ceil((value - lower) / width)` clamped
    /// to `[1, cardinality]`.  The ceil makes boundary values land in the
    /// lower-indexed cell.
    pub fn quantize(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::Quantizer("cannot quantize NaN".into()));
        }
        let t = ((value - self.lower) / self.width).ceil() + 1.0;
        let idx = t.clamp(1.0, self.cardinality as f64);
        Ok(idx as usize)
    }

    /// `true` for indices strictly between the two tail cells.
    pub fn is_interior(&self, index: usize) -> bool {
        index > 1 && index < self.cardinality
    }

    /// Cell bounds; tail cells extend to +/- infinity.
    pub fn cell_bounds(&self, index: usize) -> (f64, f64) {
        debug_assert!(index >= 1 && index <= self.cardinality);
        if index == 1 {
            (f64::NEG_INFINITY, self.lower)
        } else if index == self.cardinality {
            (self.upper, f64::INFINITY)
        } else {
            let lo = self.lower + (index - 2) as f64 * self.width;
            (lo, lo + self.width)
        }
    }

    /// Cell bounds with the tails clamped to one-width pseudo-cells just
    /// outside the finite range.
    pub fn clamped_bounds(&self, index: usize) -> (f64, f64) {
        if index == 1 {
            (self.lower - self.width, self.lower)
        } else if index == self.cardinality {
            (self.upper, self.upper + self.width)
        } else {
            self.cell_bounds(index)
        }
    }

    /// Midpoint of the cell; tails use pseudo-centers half a width outside.
    pub fn center(&self, index: usize) -> f64 {
        let (lo, hi) = self.clamped_bounds(index);
        0.5 * (lo + hi)
    }
}

/// The full quantizer: one [`AxisGrid`] per state and output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerGrid {
    state_axes: Vec<AxisGrid>,
    output_axes: Vec<AxisGrid>,
    rho: f64,
}

impl QuantizerGrid {
    /// Build state/output grids spanning `rho` steady-state deviations.
    pub fn build(
        stats: &SteadyStateStats,
        rho: f64,
        state_cards: &[usize],
        output_cards: &[usize],
    ) -> Result<Self> {
        if state_cards.len() != stats.state_std.len() {
            return Err(Error::Dimension(format!(
                "expected {} state cardinalities, got {}",
                stats.state_std.len(),
                state_cards.len()
            )));
        }
        if output_cards.len() != stats.output_std.len() {
            return Err(Error::Dimension(format!(
                "expected {} output cardinalities, got {}",
                stats.output_std.len(),
                output_cards.len()
            )));
        }
        let state_axes = state_cards
            .iter()
            .zip(stats.state_std.iter())
            .map(|(&card, &sig)| AxisGrid::from_std(sig, rho, card))
            .collect::<Result<Vec<_>>>()?;
        let output_axes = output_cards
            .iter()
            .zip(stats.output_std.iter())
            .map(|(&card, &sig)| AxisGrid::from_std(sig, rho, card))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { state_axes, output_axes, rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn state_axes(&self) -> &[AxisGrid] {
        &self.state_axes
    }

    pub fn output_axes(&self) -> &[AxisGrid] {
        &self.output_axes
    }

    pub fn state_cards(&self) -> Vec<usize> {
        self.state_axes.iter().map(AxisGrid::cardinality).collect()
    }

    pub fn output_cards(&self) -> Vec<usize> {
        self.output_axes.iter().map(AxisGrid::cardinality).collect()
    }

    /// `N = prod(N_p)`.
    pub fn state_count(&self) -> usize {
        self.state_axes.iter().map(AxisGrid::cardinality).product()
    }

    /// `M = prod(M_p)`.
    pub fn output_count(&self) -> usize {
        self.output_axes.iter().map(AxisGrid::cardinality).product()
    }

    /// Composite state index of `x` (1-based).
    pub fn quantize_state(&self, x: &DVector<f64>) -> Result<usize> {
        self.quantize_along(&self.state_axes, x.as_slice())
    }

    /// Composite output index of `y` (1-based).
    pub fn quantize_output(&self, y: &DVector<f64>) -> Result<usize> {
        self.quantize_along(&self.output_axes, y.as_slice())
    }

    fn quantize_along(&self, axes: &[AxisGrid], v: &[f64]) -> Result<usize> {
        if v.len() != axes.len() {
            return Err(Error::Dimension(format!(
                "vector length {} does not match axis count {}",
                v.len(),
                axes.len()
            )));
        }
        let mut composite = 0usize;
        for (axis, &value) in axes.iter().zip(v) {
            composite = composite * axis.cardinality() + (axis.quantize(value)? - 1);
        }
        Ok(composite + 1)
    }

    /// Per-axis cell indices of a composite state index.
    pub fn state_axis_indices(&self, composite: usize) -> Result<Vec<usize>> {
        decompose_index(composite, &self.state_cards())
    }

    /// Per-axis cell indices of a composite output index.
    pub fn output_axis_indices(&self, composite: usize) -> Result<Vec<usize>> {
        decompose_index(composite, &self.output_cards())
    }

    /// `true` when no axis index of the composite state cell is a tail cell.
    pub fn state_cell_is_interior(&self, composite: usize) -> bool {
        match self.state_axis_indices(composite) {
            Ok(idx) => idx.iter().zip(&self.state_axes).all(|(&i, ax)| ax.is_interior(i)),
            Err(_) => false,
        }
    }

    /// Representative point of a composite state cell (pseudo-centers on tails).
    pub fn state_cell_center(&self, composite: usize) -> Result<DVector<f64>> {
        let idx = self.state_axis_indices(composite)?;
        Ok(DVector::from_iterator(
            idx.len(),
            idx.iter().zip(&self.state_axes).map(|(&i, ax)| ax.center(i)),
        ))
    }

    /// Representative point of a composite output cell.
    pub fn output_cell_center(&self, composite: usize) -> Result<DVector<f64>> {
        let idx = self.output_axis_indices(composite)?;
        Ok(DVector::from_iterator(
            idx.len(),
            idx.iter().zip(&self.output_axes).map(|(&i, ax)| ax.center(i)),
        ))
    }

    /// Quantize a whole trajectory into `(state, output)` composite pairs.
    pub fn quantize_trajectory(&self, traj: &Trajectory) -> Result<Vec<(usize, usize)>> {
        traj.states
            .iter()
            .zip(&traj.outputs)
            .map(|(x, y)| Ok((self.quantize_state(x)?, self.quantize_output(y)?)))
            .collect()
    }

    /// Serialize as text: header `n m rho`, then per-axis lines
    /// `card lower upper width` (state axes first).
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {:.16e}", self.state_axes.len(), self.output_axes.len(), self.rho)?;
        for axis in self.state_axes.iter().chain(&self.output_axes) {
            writeln!(
                w,
                "{} {:.16e} {:.16e} {:.16e}",
                axis.cardinality(),
                axis.lower(),
                axis.upper(),
                axis.width()
            )?;
        }
        Ok(())
    }

    /// Read a grid written by [`Self::write_text`].
    pub fn read_text<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty grid file".into() })??;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 {
            return Err(Error::Parse { line: 1, msg: format!("bad grid header: {header}") });
        }
        let n: usize = head[0].parse().map_err(|e| Error::Parse { line: 1, msg: format!("{e}") })?;
        let m: usize = head[1].parse().map_err(|e| Error::Parse { line: 1, msg: format!("{e}") })?;
        let rho: f64 = head[2].parse().map_err(|e| Error::Parse { line: 1, msg: format!("{e}") })?;
        let mut axes = Vec::with_capacity(n + m);
        for i in 0..n + m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse { line: i + 2, msg: "missing axis line".into() })??;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Parse { line: i + 2, msg: format!("bad axis line: {line}") });
            }
            let card: usize =
                f[0].parse().map_err(|e| Error::Parse { line: i + 2, msg: format!("{e}") })?;
            let lower: f64 =
                f[1].parse().map_err(|e| Error::Parse { line: i + 2, msg: format!("{e}") })?;
            let upper: f64 =
                f[2].parse().map_err(|e| Error::Parse { line: i + 2, msg: format!("{e}") })?;
            axes.push(AxisGrid::new(card, lower, upper)?);
        }
        let output_axes = axes.split_off(n);
        Ok(Self { state_axes: axes, output_axes, rho })
    }
}

/// Composite Kronecker index of per-axis indices (all 1-based).
///
/// `pi = 1 + sum_p (pi_p - 1) * prod_{q > p} card_q`: lexicographic with the
/// first axis most significant, matching the index of
/// `delta^{pi_1} (x) ... (x) delta^{pi_n}`.
pub fn composite_index(axis_indices: &[usize], cardinalities: &[usize]) -> Result<usize> {
    if axis_indices.len() != cardinalities.len() {
        return Err(Error::Dimension(format!(
            "got {} axis indices for {} cardinalities",
            axis_indices.len(),
            cardinalities.len()
        )));
    }
    let mut composite = 0usize;
    for (&idx, &card) in axis_indices.iter().zip(cardinalities) {
        if idx < 1 || idx > card {
            return Err(Error::Quantizer(format!("axis index {idx} out of range 1..={card}")));
        }
        composite = composite * card + (idx - 1);
    }
    Ok(composite + 1)
}

/// Inverse of [`composite_index`].
pub fn decompose_index(composite: usize, cardinalities: &[usize]) -> Result<Vec<usize>> {
    let total: usize = cardinalities.iter().product();
    if composite < 1 || composite > total {
        return Err(Error::Quantizer(format!(
            "composite index {composite} out of range 1..={total}"
        )));
    }
    let mut rem = composite - 1;
    let mut out = vec![0usize; cardinalities.len()];
    for (slot, &card) in out.iter_mut().zip(cardinalities).rev() {
        *slot = rem % card + 1;
        rem /= card;
    }
    Ok(out)
}
