//! `stochlift` command-line front end.
//!
//! Exit codes: 0 on success, 2 for bad input or configuration, 3 when the
//! numerics fail (a rule without a bracket, a solver that does not converge,
//! or a study in which most trials were flagged).

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stochlift::harness::{
    fit_rate, run_study, write_json, write_summaries_csv, write_table_csv, EtaSummary, ExperimentConfig, StudyConfig,
    StudyOutput, CSV_HEADER,
};
use stochlift::noise::{
    empirical_kyfan, expected_norm, expected_norm_upper, kyfan_bound_gaussian, noise_vector, tail_prob_tau,
};
use stochlift::param_choice::{
    default_tau_grid, default_xi_grid, nu_effective, nu_rate_predict, tikhonov_rate_predict, TikhonovRateModel,
};
use stochlift::{EmpiricalSample, NoiseSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "stochlift", version, about = "Regularization under stochastic noise: bounds, studies and rate predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ky Fan noise bounds and tail probabilities.
    #[command(subcommand)]
    Kyfan(KyfanCommand),
    /// Monte Carlo studies driven by a TOML config.
    #[command(subcommand)]
    Run(RunCommand),
    /// Predicted convergence rates.
    #[command(subcommand)]
    Predict(PredictCommand),
}

#[derive(Subcommand)]
enum KyfanCommand {
    /// Analytic Ky Fan bound, expected noise norm and eta * sqrt(m).
    Bound {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        m: usize,
    },
    /// Empirical Ky Fan estimate from a file of distances (first column, optional header).
    Empirical {
        #[arg(long)]
        input: PathBuf,
    },
    /// P(||eps|| >= tau E||eps||), optionally checked by Monte Carlo.
    Tail {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        m: usize,
        /// Number of Monte Carlo samples for the check.
        #[arg(long)]
        check_mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump all summaries and trials as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RunCommand {
    FilterStudy(RunArgs),
    /// Emits `eta,ratio_delta2_over_alpha,err`.
    Autoconv(RunArgs),
    Besov(RunArgs),
    NuRandom(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RateModel {
    Uniform,
    Heavytail,
    Combined,
}

#[derive(Subcommand)]
enum PredictCommand {
    /// Inf-max rate bound for stochastic Tikhonov over a grid of Ky Fan noise levels.
    TikhonovRate {
        #[arg(long, value_enum)]
        model: RateModel,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])]
        rho_grid: Vec<f64>,
        /// Tail constant of the heavy-tail and combined models.
        #[arg(long, default_value_t = 0.1)]
        c: f64,
        /// Decay exponent of the heavy-tail model.
        #[arg(long, default_value_t = 1.0)]
        e: f64,
    },
    /// Effective smoothness and reconstruction rate for a random source exponent.
    NuRate {
        #[arg(long)]
        rho: f64,
    },
}

/// A study that ran to completion but whose results are dominated by failures.
#[derive(Debug)]
struct NumericalFailure(String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NumericalFailure>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<stochlift::Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG };
        }
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Kyfan(cmd) => kyfan(cmd),
        Command::Run(cmd) => run(cmd),
        Command::Predict(cmd) => predict(cmd),
    }
}

fn kyfan(cmd: KyfanCommand) -> anyhow::Result<()> {
    match cmd {
        KyfanCommand::Bound { eta, m } => {
            let spec = NoiseSpec::new(eta, m)?;
            println!("kyfan_bound={:.16e}", kyfan_bound_gaussian(&spec));
            println!("expected_norm={:.16e}", expected_norm(&spec));
            println!("eta_sqrt_m={:.16e}", expected_norm_upper(&spec));
        }
        KyfanCommand::Empirical { input } => {
            let distances = read_first_column(&input)?;
            let n = distances.len();
            let sample = EmpiricalSample::new(distances).with_context(|| format!("distances in {}", input.display()))?;
            println!("kyfan_empirical={:.16e}", empirical_kyfan(&sample));
            println!("samples={n}");
            println!("resolution={:.16e}", 1.0 / n as f64);
        }
        KyfanCommand::Tail { tau, m, check_mc, seed } => {
            let p = tail_prob_tau(tau, m)?;
            println!("tail_prob={p:.16e}");
            if let Some(n) = check_mc {
                if n == 0 {
                    bail!(stochlift::Error::InvalidParameter("--check-mc needs at least one sample".into()));
                }
                // the tail probability does not depend on eta, so unit variance suffices
                let spec = NoiseSpec::new(1.0, m)?;
                let threshold = tau * expected_norm(&spec);
                let hits = (0..n as u64)
                    .filter(|&id| {
                        let eps = noise_vector(&spec, seed, id);
                        eps.iter().map(|v| v * v).sum::<f64>().sqrt() >= threshold
                    })
                    .count();
                let freq = hits as f64 / n as f64;
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                println!("mc_frequency={freq:.16e}");
                println!("mc_samples={n}");
                println!("binomial_sd={sd:.16e}");
            }
        }
    }
    Ok(())
}

/// Reals from the first field of every line; a non-numeric first line is a header.
fn read_first_column(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(e) => bail!(stochlift::Error::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(values)
}

fn run(cmd: RunCommand) -> anyhow::Result<()> {
    let (args, expected) = match &cmd {
        RunCommand::FilterStudy(a) => (a, "filter"),
        RunCommand::Autoconv(a) => (a, "autoconv"),
        RunCommand::Besov(a) => (a, "besov"),
        RunCommand::NuRandom(a) => (a, "nu-random"),
    };
    let config = ExperimentConfig::from_path(&args.config)?;
    let kind = match config.study {
        StudyConfig::Filter { .. } => "filter",
        StudyConfig::Autoconv { .. } => "autoconv",
        StudyConfig::Besov { .. } => "besov",
        StudyConfig::NuRandom { .. } => "nu-random",
    };
    if kind != expected {
        bail!(stochlift::Error::Config(format!(
            "{} describes a `{kind}` study, not `{expected}`",
            args.config.display()
        )));
    }
    let output = run_study(&config)?;

    if matches!(cmd, RunCommand::Autoconv(_)) {
        emit_ratio_table(&output, args.out.as_deref())?;
    } else {
        emit_summaries(&output.summaries, args.out.as_deref())?;
        let points: Vec<(f64, f64)> = output
            .kyfan_points()
            .into_iter()
            .filter(|&(d, e)| d > 0.0 && e > 0.0)
            .collect();
        if let Ok(fit) = fit_rate(&points) {
            eprintln!(
                "rate fit: slope={:.4} r2={:.4} points={}",
                fit.slope, fit.r_squared, fit.n_points
            );
        }
    }
    if let Some(path) = &args.json {
        write_json(path, &output)?;
    }
    if output.flagged_count() > 0 {
        eprintln!("flagged trials: {} of {}", output.flagged_count(), output.trials.len());
    }
    if output.numerically_failed() {
        bail!(NumericalFailure(format!(
            "{} of {} trials failed numerically",
            output.flagged_count(),
            output.trials.len()
        )));
    }
    Ok(())
}

fn emit_summaries(rows: &[EtaSummary], out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = out {
        write_summaries_csv(path, rows)?;
        return Ok(());
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", CSV_HEADER.join(","))?;
    for r in rows {
        writeln!(
            stdout,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.eta, r.delta_eff, r.alpha_or_kstar, r.err_mean, r.err_kyfan, r.residual_mean, r.trials, r.truncated_count
        )?;
    }
    Ok(())
}

fn emit_ratio_table(output: &StudyOutput, out: Option<&Path>) -> anyhow::Result<()> {
    let header = ["eta", "ratio_delta2_over_alpha", "err"];
    let rows: Vec<Vec<f64>> = output.ratio_rows().into_iter().map(|(a, b, c)| vec![a, b, c]).collect();
    if let Some(path) = out {
        write_table_csv(path, &header, &rows)?;
        return Ok(());
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", header.join(","))?;
    for r in rows {
        writeln!(stdout, "{:.16e},{:.16e},{:.16e}", r[0], r[1], r[2])?;
    }
    Ok(())
}

fn predict(cmd: PredictCommand) -> anyhow::Result<()> {
    match cmd {
        PredictCommand::TikhonovRate { model, rho_grid, c, e } => {
            let model = match model {
                RateModel::Uniform => TikhonovRateModel::uniform(),
                RateModel::Heavytail => TikhonovRateModel::heavy_tail(c, e),
                RateModel::Combined => TikhonovRateModel::combined(c),
            };
            let (xi_grid, tau_grid) = (default_xi_grid(), default_tau_grid());
            println!("rho,bound,xi,tau");
            let mut points = Vec::with_capacity(rho_grid.len());
            for rho in rho_grid {
                let p = tikhonov_rate_predict(rho, &model, &xi_grid, &tau_grid)?;
                println!("{rho:.16e},{:.16e},{:.16e},{:.16e}", p.bound, p.xi, p.tau);
                points.push((rho, p.bound));
            }
            if let Ok(fit) = fit_rate(&points) {
                eprintln!("rate fit: slope={:.4} r2={:.4}", fit.slope, fit.r_squared);
            }
        }
        PredictCommand::NuRate { rho } => {
            let (exact, approx) = nu_effective(rho)?;
            println!("nu_exact={exact:.16e}");
            println!("nu_approx={approx:.16e}");
            println!("rate={:.16e}", nu_rate_predict(rho)?);
        }
    }
    Ok(())
}
