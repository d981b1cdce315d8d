//! Experiment harness: configs, metric runs, tradeoff sweeps, CSV output.
//!
//! One experiment simulates a ground-truth trajectory, drives the
//! event-triggered lossy channel once, and feeds the identical event stream
//! to every estimator: the Kalman baseline plus one HMM filter per supplied
//! model.  Reported metrics are the empirical communication rate
//! `eta = mean(gamma)` and the average Euclidean estimation errors over
//! `k = 1..=horizon`.  The tradeoff sweep repeats this over a delta grid
//! with per-repetition seeds and aggregates with a min/max-trimmed mean.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{BeliefVector, EventChannel, HmmFilter, KalmanFilter, KalmanState};
use crate::lgss::{SsmModel, SteadyStateStats};
use crate::model::HmmModel;
use crate::quantizer::QuantizerGrid;

/// Flat `key = value` experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub state_matrix: DMatrix<f64>,
    pub output_matrix: DMatrix<f64>,
    pub input_matrix: Option<DMatrix<f64>>,
    pub feedthrough_matrix: Option<DMatrix<f64>>,
    pub process_noise_std: Vec<f64>,
    pub measurement_noise_std: Vec<f64>,
    pub rho: f64,
    pub state_cards: Vec<usize>,
    pub output_cards: Vec<usize>,
    pub trainer: String,
    pub loops: usize,
    pub chunk: usize,
    pub structured_loops: usize,
    pub delta: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub sim_seed: u64,
    pub channel_seed: u64,
    pub train_seed: u64,
    pub repetitions: usize,
    pub delta_grid: Option<Vec<f64>>,
}

const KNOWN_KEYS: &[&str] = &[
    "state_matrix",
    "output_matrix",
    "input_matrix",
    "feedthrough_matrix",
    "process_noise_std",
    "measurement_noise_std",
    "rho",
    "state_cards",
    "output_cards",
    "trainer",
    "loops",
    "chunk",
    "structured_loops",
    "delta",
    "lambda",
    "horizon",
    "sim_seed",
    "channel_seed",
    "train_seed",
    "repetitions",
    "delta_grid",
];

impl ExperimentConfig {
    pub fn from_file<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    /// Parse the flat text format. Unknown and duplicate keys are rejected.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected 'key = value', got: {raw}"),
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate config key '{key}'")));
            }
        }
        Self::from_map(&map)
    }

    fn from_map(map: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let require = |k: &str| {
            get(k).ok_or_else(|| Error::Config(format!("missing required config key '{k}'")))
        };
        let floats = |k: &str, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Config(format!("key '{k}': bad number '{t}' ({e})")))
                })
                .collect()
        };
        let usizes = |k: &str, s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| Error::Config(format!("key '{k}': bad integer '{t}' ({e})")))
                })
                .collect()
        };

        let a_flat = floats("state_matrix", require("state_matrix")?)?;
        let n = (a_flat.len() as f64).sqrt().round() as usize;
        if n * n != a_flat.len() || n == 0 {
            return Err(Error::Config(format!(
                "state_matrix must hold n*n entries, got {}",
                a_flat.len()
            )));
        }
        let c_flat = floats("output_matrix", require("output_matrix")?)?;
        if c_flat.is_empty() || c_flat.len() % n != 0 {
            return Err(Error::Config(format!(
                "output_matrix must hold m*{n} entries, got {}",
                c_flat.len()
            )));
        }
        let m = c_flat.len() / n;
        let input_matrix = match get("input_matrix") {
            Some(s) => {
                let b = floats("input_matrix", s)?;
                if b.is_empty() || b.len() % n != 0 {
                    return Err(Error::Config(format!(
                        "input_matrix must hold {n}*u entries, got {}",
                        b.len()
                    )));
                }
                Some(DMatrix::from_row_slice(n, b.len() / n, &b))
            }
            None => None,
        };
        let feedthrough_matrix = match (get("feedthrough_matrix"), &input_matrix) {
            (Some(_), None) => {
                return Err(Error::Config("feedthrough_matrix requires input_matrix".into()))
            }
            (Some(s), Some(b)) => {
                let d = floats("feedthrough_matrix", s)?;
                if d.len() != m * b.ncols() {
                    return Err(Error::Config(format!(
                        "feedthrough_matrix must hold {}*{} entries, got {}",
                        m,
                        b.ncols(),
                        d.len()
                    )));
                }
                Some(DMatrix::from_row_slice(m, b.ncols(), &d))
            }
            (None, _) => None,
        };

        let parse_scalar = |k: &str, default: f64| -> Result<f64> {
            match get(k) {
                Some(s) => s
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("key '{k}': {e}"))),
                None => Ok(default),
            }
        };
        let parse_usize = |k: &str, default: usize| -> Result<usize> {
            match get(k) {
                Some(s) => s
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("key '{k}': {e}"))),
                None => Ok(default),
            }
        };
        let parse_u64 = |k: &str, default: u64| -> Result<u64> {
            match get(k) {
                Some(s) => s
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("key '{k}': {e}"))),
                None => Ok(default),
            }
        };

        let cfg = Self {
            state_matrix: DMatrix::from_row_slice(n, n, &a_flat),
            output_matrix: DMatrix::from_row_slice(m, n, &c_flat),
            input_matrix,
            feedthrough_matrix,
            process_noise_std: floats("process_noise_std", require("process_noise_std")?)?,
            measurement_noise_std: floats(
                "measurement_noise_std",
                require("measurement_noise_std")?,
            )?,
            rho: parse_scalar("rho", 5.0)?,
            state_cards: usizes("state_cards", require("state_cards")?)?,
            output_cards: usizes("output_cards", require("output_cards")?)?,
            trainer: get("trainer").unwrap_or("naive").to_string(),
            loops: parse_usize("loops", 100)?,
            chunk: parse_usize("chunk", 10_000)?,
            structured_loops: parse_usize("structured_loops", 1_000_000)?,
            delta: parse_scalar("delta", 0.0)?,
            lambda: parse_scalar("lambda", 1.0)?,
            horizon: parse_usize("horizon", 10_000)?,
            sim_seed: parse_u64("sim_seed", 1)?,
            channel_seed: parse_u64("channel_seed", 2)?,
            train_seed: parse_u64("train_seed", 3)?,
            repetitions: parse_usize("repetitions", 20)?,
            delta_grid: match get("delta_grid") {
                Some(s) => Some(floats("delta_grid", s)?),
                None => None,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_matrix.nrows();
        let m = self.output_matrix.nrows();
        if self.process_noise_std.len() != n || self.measurement_noise_std.len() != m {
            return Err(Error::Config(format!(
                "noise std lengths ({}, {}) must match dimensions ({n}, {m})",
                self.process_noise_std.len(),
                self.measurement_noise_std.len()
            )));
        }
        if self.state_cards.len() != n || self.output_cards.len() != m {
            return Err(Error::Config(format!(
                "cardinality lists ({}, {}) must match dimensions ({n}, {m})",
                self.state_cards.len(),
                self.output_cards.len()
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.rho <= 0.0 {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    /// Build the state-space model this config describes.
    pub fn build_ssm(&self) -> Result<SsmModel> {
        let model = SsmModel::new(
            self.state_matrix.clone(),
            self.output_matrix.clone(),
            &self.process_noise_std,
            &self.measurement_noise_std,
        )?;
        match &self.input_matrix {
            Some(b) => model.with_input(b.clone(), self.feedthrough_matrix.clone()),
            None => Ok(model),
        }
    }

    /// Build the quantizer grid for this config.
    pub fn build_grid(&self, stats: &SteadyStateStats) -> Result<QuantizerGrid> {
        QuantizerGrid::build(stats, self.rho, &self.state_cards, &self.output_cards)
    }
}

/// Per-step trace record for CSV export.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub x_true: DVector<f64>,
    pub x_kalman: DVector<f64>,
    /// One estimate per HMM model supplied to the run.
    pub x_hmm: Vec<DVector<f64>>,
    pub gamma: bool,
}

/// Raw output of one simulated run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub eta: f64,
    pub e_kalman: f64,
    /// One average error per HMM model, in input order.
    pub e_hmm: Vec<f64>,
    pub traces: Option<Vec<TraceRow>>,
}

/// Metrics of one experiment (paper-style record).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub delta: f64,
    pub lambda: f64,
    pub eta: f64,
    pub e_k: f64,
    pub e_hplus: f64,
    pub e_hminus: f64,
    /// Full-communication Kalman error on the same trajectory.
    pub e_kstar: f64,
    /// `(E_K - E_Hminus) / E_Kstar`.
    pub e_c: f64,
}

/// Drive one trajectory through the channel and every estimator.
///
/// All estimators consume the single event stream generated here; each
/// folds the gamma bits it saw into a checksum and the run asserts the
/// checksums agree.
pub fn run_filters(
    ssm: &SsmModel,
    stats: &SteadyStateStats,
    grid: &QuantizerGrid,
    hmm_models: &[&HmmModel],
    delta: f64,
    lambda: f64,
    horizon: usize,
    sim_seed: u64,
    channel_seed: u64,
    want_traces: bool,
) -> Result<RunOutcome> {
    for model in hmm_models {
        if model.state_count() != grid.state_count() || model.output_count() != grid.output_count()
        {
            return Err(Error::Dimension(format!(
                "HMM model ({} states, {} outputs) does not match grid ({}, {})",
                model.state_count(),
                model.output_count(),
                grid.state_count(),
                grid.output_count()
            )));
        }
    }
    let traj = ssm.simulate_stationary(horizon, stats, sim_seed)?;
    let mut channel = EventChannel::new(delta, lambda, traj.outputs[0].clone(), channel_seed);

    let mut kalman = KalmanFilter::new(ssm);
    let mut k_state = KalmanState::new(DVector::zeros(ssm.n()), stats.state_cov.clone());
    let mut filters = hmm_models
        .iter()
        .map(|m| HmmFilter::new(m, grid, delta, lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut beliefs: Vec<BeliefVector> = filters
        .iter()
        .map(|_| BeliefVector::stationary(stats, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut y_refs: Vec<DVector<f64>> = vec![traj.outputs[0].clone(); filters.len()];

    let fold = |cs: u64, g: bool| cs.wrapping_mul(1099511628211).wrapping_add(g as u64 + 1);
    let mut checksum_kalman = 0u64;
    let mut checksums_hmm = vec![0u64; filters.len()];
    let mut gamma_count = 0usize;
    let mut err_k = 0.0;
    let mut err_h = vec![0.0; filters.len()];
    let mut traces = want_traces.then(Vec::new);

    for k in 1..=horizon {
        let event = channel.step(k, &traj.outputs[k]);
        gamma_count += event.gamma as usize;

        checksum_kalman = fold(checksum_kalman, event.gamma);
        k_state = kalman.step(&k_state, &event);
        err_k += (&k_state.mean - &traj.states[k]).norm();

        let mut row_ests = Vec::new();
        for (i, filter) in filters.iter_mut().enumerate() {
            checksums_hmm[i] = fold(checksums_hmm[i], event.gamma);
            beliefs[i] = filter.step(&beliefs[i], &event, &y_refs[i])?;
            if event.gamma {
                y_refs[i] = traj.outputs[k].clone();
            }
            let est = filter.point_estimate(&beliefs[i]);
            err_h[i] += (&est - &traj.states[k]).norm();
            if want_traces {
                row_ests.push(est);
            }
        }
        if let Some(t) = &mut traces {
            t.push(TraceRow {
                k,
                x_true: traj.states[k].clone(),
                x_kalman: k_state.mean.clone(),
                x_hmm: row_ests,
                gamma: event.gamma,
            });
        }
    }
    assert!(
        checksums_hmm.iter().all(|&cs| cs == checksum_kalman),
        "estimators consumed different event streams"
    );
    let steps = horizon as f64;
    Ok(RunOutcome {
        eta: gamma_count as f64 / steps,
        e_kalman: err_k / steps,
        e_hmm: err_h.iter().map(|e| e / steps).collect(),
        traces,
    })
}

/// Run the configured experiment with a naive-trained and a
/// structured-trained model on one shared event stream.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    model_plus: &HmmModel,
    model_minus: &HmmModel,
) -> Result<ExperimentResult> {
    let ssm = cfg.build_ssm()?;
    let stats = ssm.steady_state()?;
    let grid = cfg.build_grid(&stats)?;
    let out = run_filters(
        &ssm,
        &stats,
        &grid,
        &[model_plus, model_minus],
        cfg.delta,
        cfg.lambda,
        cfg.horizon,
        cfg.sim_seed,
        cfg.channel_seed,
        false,
    )?;
    // Full-communication Kalman error on the same trajectory.
    let star = run_filters(
        &ssm, &stats, &grid, &[], 0.0, 1.0, cfg.horizon, cfg.sim_seed, cfg.channel_seed, false,
    )?;
    Ok(ExperimentResult {
        delta: cfg.delta,
        lambda: cfg.lambda,
        eta: out.eta,
        e_k: out.e_kalman,
        e_hplus: out.e_hmm[0],
        e_hminus: out.e_hmm[1],
        e_kstar: star.e_kalman,
        e_c: (out.e_kalman - out.e_hmm[1]) / star.e_kalman,
    })
}

/// Min/max-trimmed mean (plain mean below 3 samples).
pub fn trimmed_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    if values.len() < 3 {
        return values.iter().sum::<f64>() / values.len() as f64;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let inner = &sorted[1..sorted.len() - 1];
    inner.iter().sum::<f64>() / inner.len() as f64
}

/// One aggregated point of the tradeoff sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub delta: f64,
    pub eta: f64,
    pub e_k: f64,
    pub e_hplus: f64,
    pub e_hminus: f64,
    pub e_c: f64,
}

/// Default delta grid: `count` log-spaced points over `[lo, hi]`.
pub fn log_spaced_deltas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Sweep the trigger threshold over `deltas`, `repetitions` runs each with
/// per-repetition seeds, aggregating every metric with the trimmed mean.
///
/// `E_Kstar` is computed once (full communication, same repetition seeds)
/// and shared by all points.
pub fn sweep_tradeoff(
    cfg: &ExperimentConfig,
    model_plus: &HmmModel,
    model_minus: &HmmModel,
    deltas: &[f64],
    repetitions: usize,
) -> Result<Vec<SweepPoint>> {
    if deltas.is_empty() {
        return Err(Error::Config("sweep needs a nonempty delta grid".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("sweep needs at least one repetition".into()));
    }
    let ssm = cfg.build_ssm()?;
    let stats = ssm.steady_state()?;
    let grid = cfg.build_grid(&stats)?;

    let star_runs: Vec<f64> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            run_filters(
                &ssm,
                &stats,
                &grid,
                &[],
                0.0,
                1.0,
                cfg.horizon,
                cfg.sim_seed + rep as u64,
                cfg.channel_seed + rep as u64,
                false,
            )
            .map(|o| o.e_kalman)
        })
        .collect::<Result<_>>()?;
    let e_kstar = trimmed_mean(&star_runs);

    deltas
        .par_iter()
        .map(|&delta| {
            let runs: Vec<RunOutcome> = (0..repetitions)
                .into_par_iter()
                .map(|rep| {
                    run_filters(
                        &ssm,
                        &stats,
                        &grid,
                        &[model_plus, model_minus],
                        delta,
                        cfg.lambda,
                        cfg.horizon,
                        cfg.sim_seed + rep as u64,
                        cfg.channel_seed + rep as u64,
                        false,
                    )
                })
                .collect::<Result<_>>()?;
            let collect = |f: &dyn Fn(&RunOutcome) -> f64| -> Vec<f64> {
                runs.iter().map(f).collect()
            };
            let eta = trimmed_mean(&collect(&|r| r.eta));
            let e_k = trimmed_mean(&collect(&|r| r.e_kalman));
            let e_hplus = trimmed_mean(&collect(&|r| r.e_hmm[0]));
            let e_hminus = trimmed_mean(&collect(&|r| r.e_hmm[1]));
            Ok(SweepPoint { delta, eta, e_k, e_hplus, e_hminus, e_c: (e_k - e_hminus) / e_kstar })
        })
        .collect()
}

/// Sweep CSV: `delta,eta,E_K,E_Hplus,E_Hminus,E_c`.
pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], mut w: W) -> Result<()> {
    writeln!(w, "delta,eta,E_K,E_Hplus,E_Hminus,E_c")?;
    for p in points {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.delta, p.eta, p.e_k, p.e_hplus, p.e_hminus, p.e_c
        )?;
    }
    Ok(())
}

/// Estimation trace CSV: `k,xstar_*,xhat_kf_*,xhat_hmm_*,gamma` with one
/// column per state dimension per estimator (single-HMM runs).
pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.x_true.len());
    let mut header = String::from("k");
    for tag in ["xstar", "xhat_kf", "xhat_hmm"] {
        for d in 1..=n {
            header.push_str(&format!(",{tag}_{d}"));
        }
    }
    header.push_str(",gamma");
    writeln!(w, "{header}")?;
    for r in rows {
        let mut line = r.k.to_string();
        let hmm = r.x_hmm.first().ok_or_else(|| {
            Error::Config("trace rows carry no HMM estimate".into())
        })?;
        for v in r.x_true.iter().chain(r.x_kalman.iter()).chain(hmm.iter()) {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push_str(if r.gamma { ",1" } else { ",0" });
        writeln!(w, "{line}")?;
    }
    Ok(())
}
