//! Linear Gaussian state-space models: the training emulator.
//!
//! The plant is the stable discrete-time system
//!
//! ```text
//! x(k+1) = A x(k) + w(k),      w ~ N(0, Q),  Q = diag(q_p^2)
//! y(k)   = C x(k) + v(k),      v ~ N(0, R),  R = diag(r_p^2)
//! ```
//!
//! with optional deterministic-input matrices `B`, `D` that are only used to
//! strip a known input out of recorded data ([`SsmModel::compensate_input`]).
//! Stability is required so the state converges to a zero-mean Gaussian whose
//! covariance `P` solves the discrete Lyapunov equation `P = A P A' + Q`;
//! that covariance and the derived per-axis standard deviations drive the
//! quantization grids downstream.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::GaussianStream;

/// Smallest admissible noise standard deviation. Degenerate inputs are
/// floored here instead of rejected so noise-free limits stay testable.
pub const MIN_NOISE_STD: f64 = 1e-300;

/// A stable linear Gaussian state-space model with diagonal noise covariances.
#[derive(Debug, Clone)]
pub struct SsmModel {
    state_matrix: DMatrix<f64>,
    input_matrix: Option<DMatrix<f64>>,
    output_matrix: DMatrix<f64>,
    feedthrough_matrix: Option<DMatrix<f64>>,
    process_noise_std: DVector<f64>,
    measurement_noise_std: DVector<f64>,
}

/// Steady-state second-order statistics of a stable [`SsmModel`].
#[derive(Debug, Clone)]
pub struct SteadyStateStats {
    /// Stationary state covariance `P` (solves `P = A P A' + Q`).
    pub state_cov: DMatrix<f64>,
    /// `sigma_p^x = sqrt(P_pp)`.
    pub state_std: DVector<f64>,
    /// `sigma_p^y = sqrt((C P C' + R)_pp)`.
    pub output_std: DVector<f64>,
    /// Std of the one-step state predictor `[A]_p x`.
    pub predictor_state_std: DVector<f64>,
    /// Std of the output predictor `[C]_p x`.
    pub predictor_output_std: DVector<f64>,
}

/// A simulated state/output record, aligned index for index.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x(0..=K)`.
    pub states: Vec<DVector<f64>>,
    /// `y(0..=K)`, same length as `states`.
    pub outputs: Vec<DVector<f64>>,
    /// RNG seed the trajectory was generated with (0 for derived data).
    pub seed: u64,
}

impl SsmModel {
    /// Build and validate a model without deterministic inputs.
    ///
    /// Checks dimensions, floors nonpositive noise stds at [`MIN_NOISE_STD`],
    /// and rejects unstable dynamics (spectral radius >= 1).
    pub fn new(
        state_matrix: DMatrix<f64>,
        output_matrix: DMatrix<f64>,
        process_noise_std: &[f64],
        measurement_noise_std: &[f64],
    ) -> Result<Self> {
        let n = state_matrix.nrows();
        if n == 0 || state_matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "state matrix must be square and nonempty, got {}x{}",
                state_matrix.nrows(),
                state_matrix.ncols()
            )));
        }
        let m = output_matrix.nrows();
        if m == 0 || output_matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "output matrix must be {m}x{n}, got {}x{}",
                output_matrix.nrows(),
                output_matrix.ncols()
            )));
        }
        if process_noise_std.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} process noise stds, got {}",
                process_noise_std.len()
            )));
        }
        if measurement_noise_std.len() != m {
            return Err(Error::Dimension(format!(
                "expected {m} measurement noise stds, got {}",
                measurement_noise_std.len()
            )));
        }
        if state_matrix.iter().any(|v| !v.is_finite())
            || output_matrix.iter().any(|v| !v.is_finite())
            || process_noise_std.iter().any(|v| !v.is_finite())
            || measurement_noise_std.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidModel("model entries must be finite".into()));
        }
        let rho = spectral_radius(&state_matrix);
        if rho >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "state matrix is not stable: spectral radius {rho:.6} >= 1"
            )));
        }
        let floor = |s: &[f64]| DVector::from_iterator(s.len(), s.iter().map(|&v| v.max(MIN_NOISE_STD)));
        Ok(Self {
            state_matrix,
            input_matrix: None,
            output_matrix,
            feedthrough_matrix: None,
            process_noise_std: floor(process_noise_std),
            measurement_noise_std: floor(measurement_noise_std),
        })
    }

    /// Attach deterministic-input matrices `B` (n x u) and optionally `D` (m x u).
    pub fn with_input(mut self, input: DMatrix<f64>, feedthrough: Option<DMatrix<f64>>) -> Result<Self> {
        let u = input.ncols();
        if input.nrows() != self.n() {
            return Err(Error::Dimension(format!(
                "input matrix must have {} rows, got {}",
                self.n(),
                input.nrows()
            )));
        }
        if let Some(d) = &feedthrough {
            if d.nrows() != self.m() || d.ncols() != u {
                return Err(Error::Dimension(format!(
                    "feedthrough matrix must be {}x{}, got {}x{}",
                    self.m(),
                    u,
                    d.nrows(),
                    d.ncols()
                )));
            }
        }
        self.input_matrix = Some(input);
        self.feedthrough_matrix = feedthrough;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.state_matrix.nrows()
    }

    pub fn m(&self) -> usize {
        self.output_matrix.nrows()
    }

    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.state_matrix
    }

    pub fn output_matrix(&self) -> &DMatrix<f64> {
        &self.output_matrix
    }

    pub fn input_matrix(&self) -> Option<&DMatrix<f64>> {
        self.input_matrix.as_ref()
    }

    pub fn feedthrough_matrix(&self) -> Option<&DMatrix<f64>> {
        self.feedthrough_matrix.as_ref()
    }

    pub fn process_noise_std(&self) -> &DVector<f64> {
        &self.process_noise_std
    }

    pub fn measurement_noise_std(&self) -> &DVector<f64> {
        &self.measurement_noise_std
    }

    /// Diagonal process covariance `Q`.
    pub fn process_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.process_noise_std.map(|q| q * q))
    }

    /// Diagonal measurement covariance `R`.
    pub fn measurement_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.measurement_noise_std.map(|r| r * r))
    }

    /// Solve `P = A P A' + Q` by fixed-point iteration from `P0 = Q`,
    /// stopping when the max-abs elementwise update falls below `tol`.
    pub fn solve_steady_state(&self, tol: f64, max_iter: usize) -> Result<SteadyStateStats> {
        assert!(tol > 0.0 && max_iter > 0);
        let a = &self.state_matrix;
        let q = self.process_cov();
        let mut p = q.clone();
        let mut converged = false;
        for _ in 0..max_iter {
            let next = a * &p * a.transpose() + &q;
            let delta = (&next - &p).amax();
            p = next;
            if delta < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SteadyStateDiverged {
                max_iter,
                spectral_radius: spectral_radius(a),
            });
        }
        Ok(self.stats_from_cov(p))
    }

    /// [`Self::solve_steady_state`] with the default tolerances (1e-12, 1e6).
    pub fn steady_state(&self) -> Result<SteadyStateStats> {
        self.solve_steady_state(1e-12, 1_000_000)
    }

    fn stats_from_cov(&self, p: DMatrix<f64>) -> SteadyStateStats {
        let c = &self.output_matrix;
        let out_cov = c * &p * c.transpose() + self.measurement_cov();
        let row_std = |mat: &DMatrix<f64>| {
            DVector::from_iterator(
                mat.nrows(),
                (0..mat.nrows()).map(|i| {
                    let row = mat.row(i);
                    (row * &p * row.transpose())[(0, 0)].max(0.0).sqrt()
                }),
            )
        };
        SteadyStateStats {
            state_std: p.diagonal().map(|v| v.max(0.0).sqrt()),
            output_std: out_cov.diagonal().map(|v| v.max(0.0).sqrt()),
            predictor_state_std: row_std(&self.state_matrix),
            predictor_output_std: row_std(&self.output_matrix),
            state_cov: p,
        }
    }

    /// Simulate `length` transitions from `initial_state`.
    ///
    /// Produces `length + 1` states and outputs. Draw order per step is
    /// fixed (outputs first, then the process noise advancing the state),
    /// so trajectories are bit-reproducible for a given seed.
    pub fn simulate(&self, length: usize, initial_state: &DVector<f64>, seed: u64) -> Result<Trajectory> {
        if initial_state.len() != self.n() {
            return Err(Error::Dimension(format!(
                "initial state must have length {}, got {}",
                self.n(),
                initial_state.len()
            )));
        }
        let mut stream = GaussianStream::new(seed);
        Ok(self.simulate_with_stream(length, initial_state.clone(), seed, &mut stream))
    }

    /// Simulate with a stationary initial state `x(0) ~ N(0, P)`.
    pub fn simulate_stationary(
        &self,
        length: usize,
        stats: &SteadyStateStats,
        seed: u64,
    ) -> Result<Trajectory> {
        let mut stream = GaussianStream::new(seed);
        let x0 = sample_zero_mean(&stats.state_cov, &mut stream)?;
        Ok(self.simulate_with_stream(length, x0, seed, &mut stream))
    }

    /// Simulate driving the noise from a caller-owned stream (the trainers
    /// use one substream per loop).  `seed_label` only tags the result.
    pub fn simulate_stream(
        &self,
        length: usize,
        x0: DVector<f64>,
        seed_label: u64,
        stream: &mut GaussianStream,
    ) -> Result<Trajectory> {
        if x0.len() != self.n() {
            return Err(Error::Dimension(format!(
                "initial state must have length {}, got {}",
                self.n(),
                x0.len()
            )));
        }
        Ok(self.simulate_with_stream(length, x0, seed_label, stream))
    }

    fn simulate_with_stream(
        &self,
        length: usize,
        x0: DVector<f64>,
        seed: u64,
        stream: &mut GaussianStream,
    ) -> Trajectory {
        let (n, m) = (self.n(), self.m());
        let mut states = Vec::with_capacity(length + 1);
        let mut outputs = Vec::with_capacity(length + 1);
        let mut x = x0;
        for k in 0..=length {
            let mut y = &self.output_matrix * &x;
            for p in 0..m {
                // draws are always consumed so the stream position does not
                // depend on the stds; floored stds act as exactly zero noise
                let z = stream.next_gaussian();
                if self.measurement_noise_std[p] > MIN_NOISE_STD {
                    y[p] += self.measurement_noise_std[p] * z;
                }
            }
            outputs.push(y);
            states.push(x.clone());
            if k < length {
                let mut next = &self.state_matrix * &x;
                for p in 0..n {
                    let z = stream.next_gaussian();
                    if self.process_noise_std[p] > MIN_NOISE_STD {
                        next[p] += self.process_noise_std[p] * z;
                    }
                }
                x = next;
            }
        }
        Trajectory { states, outputs, seed }
    }

    /// Strip a known deterministic input out of a recorded trajectory.
    ///
    /// Runs the zero-state forced response `x_zs(k+1) = A x_zs(k) + B u(k)`
    /// from `x_zs(0) = 0` and subtracts it: the result is the trajectory the
    /// zero-input system would have produced under the same noise.  `inputs`
    /// must be aligned index for index with the trajectory.
    pub fn compensate_input(&self, raw: &Trajectory, inputs: &[DVector<f64>]) -> Result<Trajectory> {
        if inputs.is_empty() {
            return Ok(raw.clone());
        }
        let b = self.input_matrix.as_ref().ok_or_else(|| {
            Error::Config("compensate_input needs an input matrix when inputs are given".into())
        })?;
        if inputs.len() != raw.states.len() {
            return Err(Error::Dimension(format!(
                "expected {} input vectors (one per trajectory index), got {}",
                raw.states.len(),
                inputs.len()
            )));
        }
        let mut states = Vec::with_capacity(raw.states.len());
        let mut outputs = Vec::with_capacity(raw.outputs.len());
        let mut x_zs = DVector::zeros(self.n());
        for (k, u) in inputs.iter().enumerate() {
            if u.len() != b.ncols() {
                return Err(Error::Dimension(format!(
                    "input {k} has length {}, expected {}",
                    u.len(),
                    b.ncols()
                )));
            }
            states.push(&raw.states[k] - &x_zs);
            let mut y = &raw.outputs[k] - &self.output_matrix * &x_zs;
            if let Some(d) = &self.feedthrough_matrix {
                y -= d * u;
            }
            outputs.push(y);
            x_zs = &self.state_matrix * &x_zs + b * u;
        }
        Ok(Trajectory { states, outputs, seed: raw.seed })
    }
}

/// Draw from `N(0, cov)` via a Cholesky factor (eigenvalue fallback for
/// semidefinite covariances).
pub fn sample_zero_mean(cov: &DMatrix<f64>, stream: &mut GaussianStream) -> Result<DVector<f64>> {
    let n = cov.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| stream.next_gaussian()));
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l() * z);
    }
    let eig = nalgebra::SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-9 * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::InvalidModel(format!(
            "covariance is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    let mut root = eig.eigenvectors;
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            root[(i, j)] *= s;
        }
    }
    Ok(root * z)
}

/// Spectral radius via complex eigenvalues (Schur decomposition).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Write as CSV: header `k,x_1..x_n,y_1..y_m`, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let n = self.states.first().map_or(0, DVector::len);
        let m = self.outputs.first().map_or(0, DVector::len);
        let mut header = String::from("k");
        for p in 1..=n {
            header.push_str(&format!(",x_{p}"));
        }
        for p in 1..=m {
            header.push_str(&format!(",y_{p}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let mut line = k.to_string();
            for v in self.states[k].iter().chain(self.outputs[k].iter()) {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Read a trajectory written by [`Self::write_csv`].
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty trajectory file".into() })?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let n = cols.iter().filter(|c| c.starts_with("x_")).count();
        let m = cols.iter().filter(|c| c.starts_with("y_")).count();
        if cols.first() != Some(&"k") || n == 0 || m == 0 || cols.len() != 1 + n + m {
            return Err(Error::Parse { line: 1, msg: format!("bad trajectory header: {header}") });
        }
        let mut states = Vec::new();
        let mut outputs = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 1 + n + m {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {} fields, got {}", 1 + n + m, fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse { line: idx + 1, msg: format!("{e}: {s}") })
            };
            let x: Vec<f64> = fields[1..=n].iter().map(|s| parse(s)).collect::<Result<_>>()?;
            let y: Vec<f64> = fields[1 + n..].iter().map(|s| parse(s)).collect::<Result<_>>()?;
            states.push(DVector::from_vec(x));
            outputs.push(DVector::from_vec(y));
        }
        Ok(Self { states, outputs, seed: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq47() -> SsmModel {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.5, 0.3]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let q = 0.1f64.sqrt();
        SsmModel::new(a, c, &[q, q], &[0.01]).unwrap()
    }

    #[test]
    fn steady_state_one_step_whitening() {
        // A = 0 (n=1): P = q^2 immediately.
        let model = SsmModel::new(
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            &[0.3],
            &[0.1],
        )
        .unwrap();
        let stats = model.steady_state().unwrap();
        assert!((stats.state_cov[(0, 0)] - 0.09).abs() < 1e-14);
        assert!((stats.state_std[0] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn steady_state_scalar_closed_form() {
        // P = q^2 / (1 - a^2)
        let model = SsmModel::new(
            DMatrix::from_row_slice(1, 1, &[0.8]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            &[0.1],
            &[0.1],
        )
        .unwrap();
        let stats = model.steady_state().unwrap();
        // linear convergence leaves ~tol/(1 - a^2) residual distance
        assert!((stats.state_cov[(0, 0)] - 0.01 / 0.36).abs() < 1e-10);
    }

    #[test]
    fn steady_state_second_order_matches_kron_solve_oracle() {
        // Independently verified against the vectorized linear solve
        // vec(P) = (I - A (x) A)^{-1} vec(Q).
        let stats = eq47().steady_state().unwrap();
        let p = &stats.state_cov;
        assert!((p[(0, 0)] - 0.8152512458471772).abs() < 1e-10);
        assert!((p[(0, 1)] - 0.5406457641196021).abs() < 1e-10);
        assert!((p[(1, 0)] - 0.5406457641196021).abs() < 1e-10);
        assert!((p[(1, 1)] - 0.5120950996677747).abs() < 1e-10);
        assert!((stats.state_std[0] - 0.9029126457455213).abs() < 1e-10);
        assert!((stats.state_std[1] - 0.7156082026275095).abs() < 1e-10);
        assert!((stats.predictor_state_std[0] - 0.8457252779994088).abs() < 1e-10);
        assert!((stats.predictor_state_std[1] - 0.6419463370623549).abs() < 1e-10);
        // Consistency: var(x_p(k+1)) = sbar_p^2 + q_p^2 = P_pp.
        for p_ in 0..2 {
            let lhs = stats.predictor_state_std[p_].powi(2) + 0.1;
            assert!((lhs - stats.state_cov[(p_, p_)]).abs() < 1e-10);
        }
    }

    #[test]
    fn lyapunov_residual_small() {
        let model = eq47();
        let stats = model.steady_state().unwrap();
        let a = model.state_matrix();
        let resid = (&stats.state_cov - a * &stats.state_cov * a.transpose() - model.process_cov()).amax();
        assert!(resid < 1e-11, "residual {resid}");
    }

    #[test]
    fn unstable_model_rejected() {
        let r = SsmModel::new(
            DMatrix::from_row_slice(1, 1, &[1.01]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            &[0.1],
            &[0.1],
        );
        assert!(r.is_err());
    }

    #[test]
    fn simulate_noise_free_zero_trajectory() {
        let model = SsmModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            &[0.0, 0.0], // floored at MIN_NOISE_STD
            &[0.0],
        )
        .unwrap();
        let traj = model.simulate(50, &DVector::zeros(2), 9).unwrap();
        assert_eq!(traj.len(), 51);
        for (x, y) in traj.states.iter().zip(&traj.outputs) {
            assert!(x.iter().all(|&v| v == 0.0));
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn simulate_deterministic_given_seed() {
        let model = eq47();
        let a = model.simulate(200, &DVector::zeros(2), 77).unwrap();
        let b = model.simulate(200, &DVector::zeros(2), 77).unwrap();
        for k in 0..a.len() {
            assert_eq!(a.states[k], b.states[k]);
            assert_eq!(a.outputs[k], b.outputs[k]);
        }
    }

    #[test]
    fn empirical_covariance_matches_lyapunov() {
        let model = eq47();
        let stats = model.steady_state().unwrap();
        let traj = model.simulate_stationary(1_000_000, &stats, 5).unwrap();
        let mut cov = DMatrix::zeros(2, 2);
        for x in &traj.states {
            cov += x * x.transpose();
        }
        cov /= traj.states.len() as f64;
        let err = (&cov - &stats.state_cov).norm() / stats.state_cov.norm();
        assert!(err < 0.02, "relative Frobenius error {err}");
    }

    #[test]
    fn compensate_zero_input_is_identity() {
        let model = eq47()
            .with_input(DMatrix::from_row_slice(2, 1, &[1.0, 0.5]), None)
            .unwrap();
        let traj = model.simulate(30, &DVector::zeros(2), 3).unwrap();
        let inputs = vec![DVector::zeros(1); traj.len()];
        let comp = model.compensate_input(&traj, &inputs).unwrap();
        for k in 0..traj.len() {
            assert_eq!(comp.states[k], traj.states[k]);
            assert_eq!(comp.outputs[k], traj.outputs[k]);
        }
    }

    #[test]
    fn compensate_pure_forced_response_cancels() {
        // Noise-free forced trajectory compensates to exactly zero.
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -0.3]);
        let d = DMatrix::from_row_slice(1, 1, &[0.7]);
        let model = SsmModel::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.5, 0.3]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            &[0.0, 0.0],
            &[0.0],
        )
        .unwrap()
        .with_input(b.clone(), Some(d.clone()))
        .unwrap();

        let mut stream = GaussianStream::new(11);
        let inputs: Vec<DVector<f64>> =
            (0..21).map(|_| DVector::from_vec(vec![stream.next_gaussian()])).collect();

        // Forced run built by hand (the model's simulate has no input path).
        let mut states = vec![DVector::zeros(2)];
        let mut outputs = Vec::new();
        for k in 0..21 {
            let x: DVector<f64> = states[k].clone();
            outputs.push(model.output_matrix() * &x + &d * &inputs[k]);
            if k < 20 {
                states.push(model.state_matrix() * &x + &b * &inputs[k]);
            }
        }
        let raw = Trajectory { states, outputs, seed: 0 };
        let comp = model.compensate_input(&raw, &inputs).unwrap();
        for k in 0..comp.len() {
            assert!(comp.states[k].amax() < 1e-12);
            assert!(comp.outputs[k].amax() < 1e-12);
        }
    }

    #[test]
    fn compensate_matches_direct_stacked_oracle() {
        // Against the explicit Pi(k) U(k) products for k <= 20.
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.4, 0.9]);
        let d = DMatrix::from_row_slice(1, 2, &[0.3, -0.1]);
        let model = eq47().with_input(b.clone(), Some(d.clone())).unwrap();
        let mut stream = GaussianStream::new(21);
        let inputs: Vec<DVector<f64>> = (0..21)
            .map(|_| DVector::from_vec(vec![stream.next_gaussian(), stream.next_gaussian()]))
            .collect();

        // Simulate the forced system with recorded noise.
        let mut noise = GaussianStream::new(99);
        let mut states = vec![DVector::from_vec(vec![0.4, -0.2])];
        let mut outputs = Vec::new();
        for k in 0..21 {
            let x = states[k].clone();
            let mut y = model.output_matrix() * &x + &d * &inputs[k];
            y[0] += 0.01 * noise.next_gaussian();
            outputs.push(y);
            if k < 20 {
                let mut next = model.state_matrix() * &x + &b * &inputs[k];
                for p in 0..2 {
                    next[p] += 0.1 * noise.next_gaussian();
                }
                states.push(next);
            }
        }
        let raw = Trajectory { states: states.clone(), outputs: outputs.clone(), seed: 0 };
        let comp = model.compensate_input(&raw, &inputs).unwrap();

        // Oracle: x(k) = raw(k) - Pi(k) U(k) with Pi(k) = [A^{k-1}B ... B].
        let a = model.state_matrix();
        for k in 0..21 {
            let mut zs = DVector::zeros(2);
            for j in 0..k {
                // A^{k-1-j} B u(j)
                let mut term = &b * &inputs[j];
                for _ in 0..(k - 1 - j) {
                    term = a * term;
                }
                zs += term;
            }
            let want_x = &raw.states[k] - &zs;
            let want_y = &raw.outputs[k] - model.output_matrix() * &zs - &d * &inputs[k];
            assert!((&comp.states[k] - &want_x).amax() < 1e-10);
            assert!((&comp.outputs[k] - &want_y).amax() < 1e-10);
        }
    }

    #[test]
    fn compensate_missing_input_matrix_is_config_error() {
        let model = eq47();
        let traj = model.simulate(5, &DVector::zeros(2), 1).unwrap();
        let inputs = vec![DVector::from_vec(vec![1.0]); traj.len()];
        assert!(matches!(model.compensate_input(&traj, &inputs), Err(Error::Config(_))));
    }

    #[test]
    fn forced_minus_compensated_equals_zero_input_run() {
        // Same noise stream, with and without forcing: compensation recovers
        // the zero-input run elementwise.
        let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let model = eq47().with_input(b.clone(), None).unwrap();
        let mut noise_w = Vec::new();
        let mut noise_v = Vec::new();
        let mut stream = GaussianStream::new(4242);
        for _ in 0..=40 {
            noise_v.push(0.01 * stream.next_gaussian());
            noise_w.push(DVector::from_vec(vec![
                0.1f64.sqrt() * stream.next_gaussian(),
                0.1f64.sqrt() * stream.next_gaussian(),
            ]));
        }
        let mut um = GaussianStream::new(5);
        let inputs: Vec<DVector<f64>> =
            (0..=40).map(|_| DVector::from_vec(vec![um.next_gaussian()])).collect();

        let run = |forced: bool| {
            let mut states = vec![DVector::from_vec(vec![0.1, 0.2])];
            let mut outputs = Vec::new();
            for k in 0..=40 {
                let x = states[k].clone();
                let mut y = model.output_matrix() * &x;
                y[0] += noise_v[k];
                outputs.push(y);
                if k < 40 {
                    let mut next = model.state_matrix() * &x + &noise_w[k];
                    if forced {
                        next += &b * &inputs[k];
                    }
                    states.push(next);
                }
            }
            Trajectory { states, outputs, seed: 0 }
        };
        let comp = model.compensate_input(&run(true), &inputs).unwrap();
        let zero_input = run(false);
        for k in 0..=40 {
            assert!((&comp.states[k] - &zero_input.states[k]).amax() < 1e-10);
            assert!((&comp.outputs[k] - &zero_input.outputs[k]).amax() < 1e-10);
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let model = eq47();
        let traj = model.simulate(25, &DVector::zeros(2), 13).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,x_1,x_2,y_1\n"));
        let back = Trajectory::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.len(), traj.len());
        for k in 0..traj.len() {
            for p in 0..2 {
                assert_eq!(back.states[k][p], traj.states[k][p]);
            }
            assert_eq!(back.outputs[k][0], traj.outputs[k][0]);
        }
    }
}
