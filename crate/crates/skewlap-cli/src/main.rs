//! `skewlap`: fits, diagnostics and the convergence experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use skewlap::diagnostics::{assemble_report, ReportOptions};
use skewlap::experiments::{
    check_bundled_models, dim_svg, rate_svg, run_dim_scan, run_mean_rate, run_multinomial_exact, run_prob_rate,
    write_rows, DimScanSpec, MultinomialSpec, RateSpec,
};
use skewlap::logreg::{build_posterior, isotropic_prior, LogRegDataset};
use skewlap::model::default_step;
use skewlap::multinomial;
use skewlap::{
    check_derivatives, find_mode, fit_laplace, whitened_third, DVector, Error, ModeOptions, PosteriorModel,
    Representation, SkewCorrection,
};

const EXIT_ARGUMENT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const DERIV_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "skewlap", version, about = "Laplace and skew-corrected Laplace approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Comma-separated ascending sample sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,

    /// Comma-separated ascending dimensions.
    #[arg(long, global = true, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,

    /// Multinomial counts: comma-separated integers or a one-column CSV file.
    #[arg(long, global = true)]
    counts: Option<String>,

    /// Logistic regression data: CSV with columns y,x1..xd.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Isotropic prior precision for logistic regression (0 is a flat prior).
    #[arg(long, global = true, default_value_t = 0.0)]
    prior_precision: f64,

    /// Monte-Carlo draws.
    #[arg(long, global = true)]
    mc_count: Option<usize>,

    /// Posteriors per grid point.
    #[arg(long, global = true)]
    replicates: Option<usize>,

    /// Random points per model for `check-derivs`.
    #[arg(long, global = true, default_value_t = 20)]
    points: usize,

    /// Write the result table as CSV.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write the JSON payload to a file instead of stdout.
    #[arg(long, global = true)]
    json: Option<PathBuf>,

    /// Write a log-log SVG plot.
    #[arg(long, global = true)]
    svg: Option<PathBuf>,

    /// Use the full dimension and replicate ranges (slower).
    #[arg(long, global = true)]
    full_scale: bool,

    /// Plain Monte Carlo for the skew-corrected probability (antithetic by default).
    #[arg(long, global = true)]
    plain_mc: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference derivative checks.
    CheckDerivs,
    /// Mode, Laplace covariance and skew correction.
    Fit,
    /// Full diagnostics report with assembled bounds.
    Diagnose,
    /// Reproduce an experiment.
    Exp {
        #[command(subcommand)]
        kind: ExpKind,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum ExpKind {
    MeanRate,
    ProbRate,
    DimScan,
    Multinomial,
}

fn argument(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn read_counts(spec: &str) -> anyhow::Result<Vec<u64>> {
    let path = Path::new(spec);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?
    } else {
        spec.to_string()
    };
    Ok(multinomial::parse_counts(&text)?)
}

enum Loaded {
    Multinomial(multinomial::MultinomialPosterior),
    Logistic(skewlap::logreg::LogRegPosterior),
}

impl Loaded {
    fn from_cli(cli: &Cli) -> anyhow::Result<Self> {
        match (&cli.counts, &cli.data) {
            (Some(_), Some(_)) => Err(argument("give either --counts or --data, not both")),
            (Some(c), None) => Ok(Loaded::Multinomial(multinomial::build(&read_counts(c)?)?)),
            (None, Some(path)) => {
                if !(cli.prior_precision >= 0.0) {
                    return Err(argument("--prior-precision must be non-negative"));
                }
                let data = LogRegDataset::read_csv(path)?;
                let d = data.d();
                Ok(Loaded::Logistic(build_posterior(data, isotropic_prior(d, cli.prior_precision))?))
            }
            (None, None) => Err(argument("a model needs --counts or --data")),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Loaded::Multinomial(_) => "multinomial",
            Loaded::Logistic(_) => "logistic",
        }
    }

    fn model(&self) -> &dyn PosteriorModel {
        match self {
            Loaded::Multinomial(m) => m,
            Loaded::Logistic(m) => m,
        }
    }

    fn start(&self) -> DVector<f64> {
        let d = self.model().dim();
        match self {
            Loaded::Multinomial(_) => DVector::from_element(d, 1.0 / (d as f64 + 1.0)),
            Loaded::Logistic(_) => DVector::zeros(d),
        }
    }
}

struct Fitted {
    mode: skewlap::ModeResult,
    sc: SkewCorrection,
}

fn fit_model(model: &dyn PosteriorModel, start: &DVector<f64>) -> anyhow::Result<Fitted> {
    let mode = find_mode(model, start, ModeOptions::default())?;
    if mode.diverged {
        return Err(Error::Numerical("mode search diverged: the posterior has no finite mode".into()).into());
    }
    if !mode.converged {
        return Err(Error::Numerical(format!("mode search did not converge (gradient norm {:.3e})", mode.grad_norm)).into());
    }
    let fit = fit_laplace(model, &mode.mode, 1.0, 4.0)?;
    let rep = if fit.dim() <= skewlap::laplace::DENSE_CAP { Representation::Dense } else { Representation::LowRank };
    let tensor = whitened_third(model, &fit, rep)?;
    Ok(Fitted { mode, sc: SkewCorrection::new(model, &fit, tensor) })
}

fn to_value<T: Serialize>(v: &T) -> anyhow::Result<Value> {
    serde_json::to_value(v).context("serializing output")
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    match cli.command {
        Command::CheckDerivs => {
            if cli.counts.is_none() && cli.data.is_none() {
                let summaries = check_bundled_models(cli.seed, cli.points, DERIV_TOL)?;
                let passed = summaries.iter().all(|s| s.passed());
                return Ok(json!({ "passed": passed, "tol": DERIV_TOL, "models": to_value(&summaries)? }));
            }
            let loaded = Loaded::from_cli(cli)?;
            let f = fit_model(loaded.model(), &loaded.start())?;
            let x = &f.sc.fit.mode;
            let rep = check_derivatives(loaded.model(), x, default_step(x), DERIV_TOL);
            Ok(json!({ "model": loaded.name(), "passed": rep.passed, "tol": DERIV_TOL, "at_mode": to_value(&rep)? }))
        }
        Command::Fit => {
            let loaded = Loaded::from_cli(cli)?;
            let model = loaded.model();
            let f = fit_model(model, &loaded.start())?;
            let fit = &f.sc.fit;
            let cov = fit.covariance();
            let covariance: Vec<Vec<f64>> = cov.row_iter().map(|r| r.iter().cloned().collect()).collect();
            Ok(json!({
                "model": loaded.name(),
                "dim": fit.dim(),
                "mode": fit.mode.as_slice(),
                "iterations": f.mode.iterations,
                "grad_norm": f.mode.grad_norm,
                "covariance": covariance,
                "delta_mode": f.sc.delta_mode.as_slice(),
                "corrected_mean": f.sc.corrected_mean().as_slice(),
                "eps_bar3": f.sc.eps_bar3,
            }))
        }
        Command::Diagnose => {
            let loaded = Loaded::from_cli(cli)?;
            let model = loaded.model();
            let f = fit_model(model, &loaded.start())?;
            let mut opts = ReportOptions { seed: cli.seed, ..Default::default() };
            if let Some(m) = cli.mc_count {
                opts.mc_count = m;
            }
            let report = assemble_report(model, &f.sc.fit, &f.sc, opts)?;
            let mut v = to_value(&report)?;
            v["model"] = json!(loaded.name());
            v["observable_bound"] = json!(report.observable_bound());
            Ok(v)
        }
        Command::Exp { kind } => run_experiment(cli, kind),
    }
}

fn rate_spec(cli: &Cli) -> RateSpec {
    let mut spec = RateSpec { seed: cli.seed, antithetic: !cli.plain_mc, ..Default::default() };
    if let Some(n) = &cli.n_list {
        spec.n_list = n.clone();
    }
    if let Some(r) = cli.replicates {
        spec.replicates = r;
    }
    if let Some(m) = cli.mc_count {
        spec.mc_count = m;
    }
    spec
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn run_experiment(cli: &Cli, kind: ExpKind) -> anyhow::Result<Value> {
    match kind {
        ExpKind::MeanRate | ExpKind::ProbRate => {
            let spec = rate_spec(cli);
            let table = if matches!(kind, ExpKind::MeanRate) { run_mean_rate(&spec)? } else { run_prob_rate(&spec)? };
            for r in &table.rows {
                eprintln!("n = {:>5}  uncorrected {:.4e}  corrected {:.4e}", r.n, r.err_uncorrected, r.err_corrected);
            }
            eprintln!("slopes: uncorrected {:.3}, corrected {:.3}", table.slope_uncorrected, table.slope_corrected);
            if let Some(p) = &cli.out {
                write_rows(p, &table.rows)?;
            }
            if let Some(p) = &cli.svg {
                write_text(p, &rate_svg(&table))?;
            }
            let mut v = to_value(&table)?;
            v["antithetic"] = json!(spec.antithetic && matches!(kind, ExpKind::ProbRate));
            Ok(v)
        }
        ExpKind::DimScan => {
            let mut spec = if cli.full_scale { DimScanSpec::full_scale() } else { DimScanSpec::desk() };
            spec.seed = cli.seed;
            if let Some(d) = &cli.d_list {
                spec.d_list = d.clone();
            }
            if let Some(r) = cli.replicates {
                spec.replicates = r;
            }
            if let Some(m) = cli.mc_count {
                spec.mc_count = m;
            }
            let table = run_dim_scan(&spec)?;
            for r in &table.rows {
                eprintln!("d = {:>3}  n = {:>6}  L_TV {:.4e}  delta {:.4e}", r.d, r.n, r.ltv, r.delta_norm);
            }
            eprintln!(
                "n=d^2.5 slopes: L_TV {:.3}, delta {:.3}; n=2d^2 max/min L_TV {:.3}",
                table.slope_ltv, table.slope_delta, table.flat_ratio_ltv
            );
            if let Some(p) = &cli.out {
                write_rows(p, &table.rows)?;
            }
            if let Some(p) = &cli.svg {
                write_text(p, &dim_svg(&table))?;
            }
            to_value(&table)
        }
        ExpKind::Multinomial => {
            let counts = read_counts(cli.counts.as_deref().ok_or_else(|| argument("exp multinomial needs --counts"))?)?;
            let spec = MultinomialSpec { counts, mc_count: cli.mc_count.unwrap_or(100_000), seed: cli.seed, restarts: 20 };
            let report = run_multinomial_exact(&spec)?;
            if cli.out.is_some() || cli.svg.is_some() {
                eprintln!("note: exp multinomial writes JSON only; --out and --svg are ignored");
            }
            to_value(&report)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_argument_error() => EXIT_ARGUMENT,
        Some(_) => EXIT_NUMERICAL,
        None => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ARGUMENT) } else { ExitCode::SUCCESS };
        }
    };
    let start = Instant::now();
    match run(&cli) {
        Ok(mut payload) => {
            payload["metadata"] = json!({
                "seed": cli.seed,
                "git_revision": git_revision(),
                "wall_time_s": start.elapsed().as_secs_f64(),
                "version": env!("CARGO_PKG_VERSION"),
            });
            let text = serde_json::to_string_pretty(&payload).expect("JSON values always serialize");
            match &cli.json {
                Some(p) => {
                    if let Err(e) = write_text(p, &text) {
                        eprintln!("error: {e:#}");
                        return ExitCode::from(exit_code(&e));
                    }
                }
                None => println!("{text}"),
            }
            if payload.get("passed") == Some(&Value::Bool(false)) {
                eprintln!("error: derivative checks failed");
                return ExitCode::from(EXIT_NUMERICAL);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
