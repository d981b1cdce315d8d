//! `lghmm`: train HMM approximations of linear Gaussian systems and run
//! event-triggered estimation experiments.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use lghmm::experiments::{
    log_spaced_deltas, run_filters, sweep_tradeoff, write_sweep_csv, write_trace_csv,
    ExperimentConfig,
};
use lghmm::model::{column_tv, HmmModel};
use lghmm::trainer::{TrainBudget, TrainerRegistry};

#[derive(Parser)]
#[command(name = "lghmm", version, about = "HMM learning for linear Gaussian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model by exhaustive Monte Carlo counting.
    TrainNaive {
        #[arg(long)]
        config: PathBuf,
        /// Master training seed (defaults to the config's train_seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model with the reduced-complexity column-shift method.
    TrainStructured {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the sampling-free analytic model by midpoint integration.
    TrainAnalytic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two model files column by column.
    CompareModels {
        /// First model file.
        #[arg(long)]
        a: PathBuf,
        /// Second model file.
        #[arg(long)]
        b: PathBuf,
        /// Overlay CSV (`col_index,row_index,value_a,value_b`).
        #[arg(long)]
        out: PathBuf,
        /// Optional per-column TV distance CSV (`col_index,tv`).
        #[arg(long)]
        tv_out: Option<PathBuf>,
        /// Restrict the overlay to the given number of highest-TV columns
        /// (0 = all columns).
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
    /// Run one estimation experiment and write the trajectory trace.
    Estimate {
        /// Trained HMM model file.
        #[arg(long)]
        model: PathBuf,
        /// System/experiment config file.
        #[arg(long)]
        ssm: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: u64,
        /// Trace CSV (`k,xstar_*,xhat_kf_*,xhat_hmm_*,gamma`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the trigger threshold and emit the tradeoff curve.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model_naive: PathBuf,
        #[arg(long)]
        model_structured: PathBuf,
        /// Tradeoff CSV (`delta,eta,E_K,E_Hplus,E_Hminus,E_c`).
        #[arg(long)]
        out: PathBuf,
    },
}

fn train(config: &PathBuf, trainer_name: &str, seed: Option<u64>, out: &PathBuf) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_file(config)
        .with_context(|| format!("reading config {}", config.display()))?;
    let ssm = cfg.build_ssm()?;
    let stats = ssm.steady_state()?;
    let grid = cfg.build_grid(&stats)?;
    let registry = TrainerRegistry::builtin();
    let trainer = registry.require(trainer_name)?;
    let budget = match trainer_name {
        "structured" => TrainBudget { loops: cfg.structured_loops, chunk: 2 },
        _ => TrainBudget { loops: cfg.loops, chunk: cfg.chunk },
    };
    let seed = seed.unwrap_or(cfg.train_seed);
    let model = trainer.train(&ssm, &stats, &grid, &budget, seed)?;
    model.write_file(out)?;
    eprintln!(
        "trained '{}' model: {} states, {} outputs, {} unvisited transition columns -> {}",
        trainer_name,
        model.state_count(),
        model.output_count(),
        model.unvisited_transition_cols().len(),
        out.display()
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::TrainNaive { config, seed, out } => train(&config, "naive", seed, &out),
        Command::TrainStructured { config, seed, out } => train(&config, "structured", seed, &out),
        Command::TrainAnalytic { config, out } => train(&config, "analytic", None, &out),
        Command::CompareModels { a, b, out, tv_out, top } => compare_models(&a, &b, &out, tv_out.as_ref(), top),
        Command::Estimate { model, ssm, delta, lambda, steps, seed, out } => {
            estimate(&model, &ssm, delta, lambda, steps, seed, &out)
        }
        Command::Sweep { config, model_naive, model_structured, out } => {
            sweep(&config, &model_naive, &model_structured, &out)
        }
    }
}

fn compare_models(
    a_path: &PathBuf,
    b_path: &PathBuf,
    out: &PathBuf,
    tv_out: Option<&PathBuf>,
    top: usize,
) -> anyhow::Result<()> {
    let a = HmmModel::read_file(a_path)?;
    let b = HmmModel::read_file(b_path)?;
    if a.state_count() != b.state_count() || a.output_count() != b.output_count() {
        bail!(
            "model shapes differ: {}x{} vs {}x{}",
            a.state_count(),
            a.output_count(),
            b.state_count(),
            b.output_count()
        );
    }
    let n = a.state_count();
    let mut tvs: Vec<(usize, f64)> = (0..n)
        .map(|j| (j + 1, column_tv(a.transition().column(j), b.transition().column(j))))
        .collect();

    if let Some(path) = tv_out {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        use std::io::Write;
        writeln!(w, "col_index,tv")?;
        for &(j, tv) in &tvs {
            writeln!(w, "{j},{tv:.16e}")?;
        }
    }

    // overlay data, worst columns first when a cutoff is requested
    tvs.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    let selected: Vec<usize> = if top == 0 {
        (1..=n).collect()
    } else {
        tvs.iter().take(top).map(|&(j, _)| j).collect()
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    use std::io::Write;
    writeln!(w, "col_index,row_index,value_a,value_b")?;
    for &j in &selected {
        let ca = a.transition().dense_column(j - 1);
        let cb = b.transition().dense_column(j - 1);
        for i in 0..n {
            if ca[i] != 0.0 || cb[i] != 0.0 {
                writeln!(w, "{j},{},{:.16e},{:.16e}", i + 1, ca[i], cb[i])?;
            }
        }
    }
    let visited: Vec<f64> =
        tvs.iter().map(|&(_, tv)| tv).filter(|tv| tv.is_finite()).collect();
    let mean_tv = visited.iter().sum::<f64>() / visited.len().max(1) as f64;
    eprintln!(
        "compared {} transition columns: max TV {:.4}, mean TV {:.4}",
        n,
        tvs.first().map_or(0.0, |&(_, tv)| tv),
        mean_tv
    );
    Ok(())
}

fn estimate(
    model_path: &PathBuf,
    ssm_path: &PathBuf,
    delta: f64,
    lambda: f64,
    steps: usize,
    seed: u64,
    out: &PathBuf,
) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_file(ssm_path)?;
    let hmm = HmmModel::read_file(model_path)?;
    let ssm = cfg.build_ssm()?;
    let stats = ssm.steady_state()?;
    let grid = cfg.build_grid(&stats)?;
    // sim noise and channel draws use substreams of the one seed
    let outcome = run_filters(
        &ssm,
        &stats,
        &grid,
        &[&hmm],
        delta,
        lambda,
        steps,
        seed,
        seed.wrapping_add(1),
        true,
    )?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    write_trace_csv(outcome.traces.as_ref().unwrap(), &mut w)?;
    eprintln!(
        "eta = {:.4}, E_K = {:.4}, E_H = {:.4} over {} steps -> {}",
        outcome.eta,
        outcome.e_kalman,
        outcome.e_hmm[0],
        steps,
        out.display()
    );
    Ok(())
}

fn sweep(
    config: &PathBuf,
    naive_path: &PathBuf,
    structured_path: &PathBuf,
    out: &PathBuf,
) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let plus = HmmModel::read_file(naive_path)?;
    let minus = HmmModel::read_file(structured_path)?;
    let deltas = cfg
        .delta_grid
        .clone()
        .unwrap_or_else(|| log_spaced_deltas(0.02, 3.0, 40));
    let points = sweep_tradeoff(&cfg, &plus, &minus, &deltas, cfg.repetitions)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    write_sweep_csv(&points, &mut w)?;
    eprintln!("swept {} delta values x {} repetitions -> {}", deltas.len(), cfg.repetitions, out.display());
    Ok(())
}
