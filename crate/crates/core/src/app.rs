//! Command-line front end. Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptive::{AdaptiveModel, MlBackend};
use crate::config::{default_initial_guess, RunConfig, ToleranceConfig};
use crate::error::{Error, Result};
use crate::fom::FomProblem;
use crate::model::{l2_time_norm, OutputSignal, Parameter, StateModel};
use crate::montecarlo::{monte_carlo_observed, TierWindow};
use crate::optimize::{initial_tolerance, optimize_misfit, NelderMeadConfig};
use crate::rb::{state_l2_energy_norm, RbGenerator};
use crate::telemetry::export_telemetry;

#[derive(Parser, Debug)]
#[command(name = "rbml", version, about = "Certified adaptive surrogate hierarchy for parabolic problems")]
pub struct Cli {
    /// JSON run configuration (defaults to the small heat test problem).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fixed tolerance of the adaptive model.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub ml: Option<MlChoice>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MlChoice {
    Vkoga,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolveModel {
    Fom,
    Adaptive,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Output signal at one parameter, written to `output.csv`.
    Solve {
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        #[arg(long, value_enum, default_value = "fom")]
        model: SolveModel,
    },
    /// Output-misfit minimization against the full-order output at the reference parameter.
    Optimize,
    /// Monte Carlo estimate of the time-averaged output.
    Mc {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Reduced-basis error versus estimate over sampled parameters.
    Validate {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Prints the resolved configuration and problem size.
    Info,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::OverlappingRectangles(_)
        | Error::RasterSizeMismatch { .. }
        | Error::EmptyRegion
        | Error::EmptyTimeWindow => 1,
        _ => 2,
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(eps) = cli.eps {
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("--eps must be nonnegative, got {eps}")));
        }
        cfg.tolerance = ToleranceConfig::Fixed { epsilon: eps };
    }
    match cli.ml {
        Some(MlChoice::Vkoga) if !matches!(cfg.ml, MlBackend::Vkoga { .. }) => cfg.ml = MlBackend::Vkoga { config: Default::default() },
        Some(MlChoice::Mlp) if !matches!(cfg.ml, MlBackend::Mlp { .. }) => cfg.ml = MlBackend::Mlp { config: Default::default() },
        _ => {}
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("rbml-out"))
}

fn parse_mu(fom: &FomProblem, values: &[f64]) -> Result<Parameter> {
    let mu = Parameter(values.to_vec());
    fom.parameter_box.check(&mu)?;
    Ok(mu)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_signal(path: &Path, signal: &OutputSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "value"])?;
    for (k, v) in signal.values.iter().enumerate() {
        w.write_record([signal.grid.node(k).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn fixed_model(cfg: &RunConfig, fom: &Arc<FomProblem>, default_eps: f64) -> Result<AdaptiveModel> {
    let eps = cfg.fixed_epsilon().unwrap_or(default_eps);
    AdaptiveModel::new(Arc::clone(fom), eps, cfg.hapod, &cfg.seeded_backend(), cfg.retrain)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if let Command::Info = cli.command {
        let fom = cfg.problem.build()?;
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        println!(
            "dofs {} parameters {} time nodes {} t_end {}",
            fom.dim(),
            fom.param_dim(),
            fom.time_grid.num_nodes(),
            fom.time_grid.t_end()
        );
        return Ok(());
    }
    let fom = Arc::new(cfg.problem.build()?);
    let dir = out_dir(&cfg);
    fs::create_dir_all(&dir)?;
    match &cli.command {
        Command::Solve { mu, model } => {
            let mu = parse_mu(&fom, mu)?;
            let out = match model {
                SolveModel::Fom => fom.eval_output(&mu)?,
                SolveModel::Adaptive => {
                    let mut m = fixed_model(&cfg, &fom, 1e-3)?;
                    let (out, _) = m.eval_output(&mu)?;
                    export_telemetry(m.records(), m.tolerance_events(), fom.param_dim(), &dir)?;
                    out
                }
            };
            write_signal(&dir.join("output.csv"), &out)?;
            println!("wrote {} ({} nodes, L2 norm {:.6e})", dir.join("output.csv").display(), out.values.len(), l2_time_norm(&out));
        }
        Command::Optimize => optimize_command(&cfg, &fom, &dir)?,
        Command::Mc { samples } => {
            let n = samples.unwrap_or(cfg.monte_carlo.samples);
            let mut m = fixed_model(&cfg, &fom, 5e-2)?;
            let count = cfg.monte_carlo.audit.min(n);
            let mut audit = Vec::with_capacity(count);
            let report = monte_carlo_observed(&mut m, n, cfg.problem.output_window(), cfg.seed, |i, mu, out| {
                if count > 0 && (i * count) % n < count {
                    let truth = fom.eval_output(mu)?;
                    audit.push(AuditRow { index: i, error: l2_time_norm(&truth.sub(out)?) });
                }
                Ok(())
            })?;
            export_telemetry(&report.records, m.tolerance_events(), fom.param_dim(), &dir)?;
            write_json(
                &dir.join("mc.json"),
                &McSummary {
                    n_mc: report.n_mc,
                    mean: report.mean,
                    variance: report.variance,
                    epsilon: m.epsilon(),
                    retrainings: report.retrainings.clone(),
                    windows: report.windows.clone(),
                    audit: audit.clone(),
                },
            )?;
            println!("mean {:.8e} variance {:.8e} over {} samples", report.mean, report.variance, report.n_mc);
            if let Some(worst) = audit.iter().map(|a| a.error).reduce(f64::max) {
                println!("largest audited output error {worst:.3e} (tolerance {:.3e})", m.epsilon());
                if worst > m.epsilon() * (1.0 + 1e-10) {
                    return Err(Error::EnrichmentFailed { estimate: worst, tolerance: m.epsilon() });
                }
            }
        }
        Command::Validate { samples } => validate_command(&cfg, &fom, samples.unwrap_or(cfg.validate.samples), &dir)?,
        Command::Info => unreachable!(),
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct AuditRow {
    index: usize,
    error: f64,
}

#[derive(Serialize)]
struct McSummary {
    n_mc: usize,
    mean: f64,
    variance: f64,
    epsilon: f64,
    retrainings: Vec<usize>,
    windows: Vec<TierWindow>,
    audit: Vec<AuditRow>,
}

fn optimize_command(cfg: &RunConfig, fom: &Arc<FomProblem>, dir: &Path) -> Result<()> {
    let bounds = &fom.parameter_box;
    let reference = match &cfg.optimize.reference {
        Some(r) => parse_mu(fom, r)?,
        None => bounds.center(),
    };
    let target = fom.eval_output(&reference)?;
    let mut nm: NelderMeadConfig = cfg.optimize.nelder_mead.clone();
    if nm.initial.is_none() {
        nm.initial = Some(default_initial_guess(&cfg.problem, bounds));
    }
    let (eps, stagnation) = match &cfg.tolerance {
        ToleranceConfig::Fixed { epsilon } => (*epsilon, None),
        ToleranceConfig::Adaptive(s) => (initial_tolerance(&target, s), Some(s)),
    };
    let mut m = AdaptiveModel::new(Arc::clone(fom), eps, cfg.hapod, &cfg.seeded_backend(), cfg.retrain)?;
    let report = optimize_misfit(&mut m, &target, &nm, stagnation)?;
    let norm = reference.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel_error =
        report.mu.iter().zip(reference.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm.max(f64::MIN_POSITIVE);
    export_telemetry(&report.records, &report.tolerance_events, fom.param_dim(), dir)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "mu": report.mu,
            "objective": report.objective,
            "evals": report.evals,
            "converged": report.converged,
            "reference": reference.values(),
            "relative_minimizer_error": rel_error,
            "initial_epsilon": eps,
            "final_epsilon": report.final_epsilon,
            "tolerance_events": report.tolerance_events,
        }),
    )?;
    println!(
        "mu {:?} objective {:.6e} evals {} converged {} relative error {:.3e}",
        report.mu, report.objective, report.evals, report.converged, rel_error
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationRow {
    pub index: usize,
    pub mu: Vec<f64>,
    pub output_error: f64,
    pub output_estimate: f64,
    pub state_error: f64,
    pub state_estimate: f64,
}

/// Builds a reduced basis from `cfg.validate.training` random parameters and compares true
/// errors with their bounds at `samples` further random parameters.
pub fn validation_table(cfg: &RunConfig, fom: &Arc<FomProblem>, samples: usize) -> Result<Vec<ValidationRow>> {
    let eps = cfg.fixed_epsilon().unwrap_or(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = RbGenerator::new(Arc::clone(fom), eps, cfg.hapod)?;
    for _ in 0..cfg.validate.training {
        gen.extend(&fom.parameter_box.sample_uniform(&mut rng))?;
    }
    let rb = gen.precompute()?;
    let mut rows = Vec::with_capacity(samples);
    for index in 0..samples {
        let mu = fom.parameter_box.sample_uniform(&mut rng);
        let truth = fom.eval_state(&mu)?;
        let traj = rb.solve(&mu)?;
        let output_error = l2_time_norm(&fom.output_of(&truth).sub(&rb.output(&traj)?)?);
        let state_error = state_l2_energy_norm(fom, &(&truth.coeffs - rb.reconstruct(&traj)?));
        rows.push(ValidationRow {
            index,
            mu: mu.0.clone(),
            output_error,
            output_estimate: rb.est_output_of(&traj, &mu)?,
            state_error,
            state_estimate: rb.est_state(&traj, &mu)?,
        });
    }
    Ok(rows)
}

fn validate_command(cfg: &RunConfig, fom: &Arc<FomProblem>, samples: usize, dir: &Path) -> Result<()> {
    let rows = validation_table(cfg, fom, samples)?;
    let mut w = csv::Writer::from_path(dir.join("validate.csv"))?;
    let mut header = vec!["index".to_string()];
    header.extend((0..fom.param_dim()).map(|i| format!("mu_{i}")));
    header.extend(["output_error", "output_estimate", "output_effectivity", "state_error", "state_estimate", "state_effectivity"].map(String::from));
    w.write_record(&header)?;
    let eff = |est: f64, err: f64| if err > 0.0 { est / err } else { f64::INFINITY };
    let mut violations = 0;
    for r in &rows {
        let mut row = vec![r.index.to_string()];
        row.extend(r.mu.iter().map(|v| v.to_string()));
        row.extend([
            r.output_error,
            r.output_estimate,
            eff(r.output_estimate, r.output_error),
            r.state_error,
            r.state_estimate,
            eff(r.state_estimate, r.state_error),
        ]
        .map(|v| v.to_string()));
        w.write_record(&row)?;
        println!(
            "{:>4} output error {:.3e} <= {:.3e}   state error {:.3e} <= {:.3e}",
            r.index, r.output_error, r.output_estimate, r.state_error, r.state_estimate
        );
        if r.output_estimate < r.output_error || r.state_estimate < r.state_error {
            violations += 1;
        }
    }
    w.flush()?;
    if violations > 0 {
        return Err(Error::InvalidArgument(format!("{violations} estimates below the true error")));
    }
    Ok(())
}
