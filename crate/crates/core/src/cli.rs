//! Command-line front end: `fit`, `simulate` and `generate`.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 data
//! validation failure, 4 solver or covariance failure, 5 aborted study.
//! Data goes to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fmt::Debug;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::covariance::{self, BandwidthRule, KernelSpec};
use crate::inference::{self, ConfidenceInterval, CovarianceMethod};
use crate::panel::{self, PanelData, Schema};
use crate::qrcore::QuantileLevel;
use crate::simulation::{self, DgpConfig, SimulationError};
use crate::solver::{self, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_ABORTED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "feqr", version, about = "Fixed-effects panel quantile regression with common-shock-robust inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a panel CSV at one or more quantile levels and report intervals.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a configuration file.
    Simulate(SimulateArgs),
    /// Write one draw of the simulation design as a panel CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Robust,
    Standard,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    SilvermanN,
    SilvermanNt,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Quantile level in (0, 1); repeat for several levels.
    #[arg(long = "tau", required = true)]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = RuleArg::SilvermanN)]
    bandwidth_rule: RuleArg,
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
    /// Include the unit intercepts in the report.
    #[arg(long)]
    alphas: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, env = "FEQR_WORKERS")]
    workers: Option<usize>,
    /// Override the configured replication count.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long)]
    no_common_shock: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub passes: bool,
    pub max_h1: f64,
    pub bound_h1: f64,
    pub h2_norm: f64,
    pub bound_h2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub method: String,
    pub coefficient: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub degenerate: bool,
}

impl From<&ConfidenceInterval> for IntervalReport {
    fn from(ci: &ConfidenceInterval) -> Self {
        Self {
            method: ci.method.name().into(),
            coefficient: ci.coefficient_index,
            estimate: ci.estimate,
            std_error: ci.std_error,
            lower: ci.lower,
            upper: ci.upper,
            level: ci.level,
            degenerate: ci.degenerate,
        }
    }
}

/// Everything reported for one quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tau: f64,
    pub beta_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<Vec<f64>>,
    pub objective: f64,
    pub bandwidth: f64,
    pub certificate: CertificateSummary,
    pub intervals: Vec<IntervalReport>,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Variant name of an error enum, taken from its `Debug` form.
fn kind<E: Debug>(e: &E) -> String {
    let dbg = format!("{e:?}");
    let end = dbg.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(dbg.len());
    dbg[..end].to_string()
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Generate(a) => cmd_generate(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let taus: Vec<QuantileLevel> = args
        .taus
        .iter()
        .map(|&t| QuantileLevel::new(t))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", kind(&e))))?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(fail(EXIT_USAGE, format!("InvalidArgument: level must lie in (0, 1), got {}", args.level)));
    }
    let rule = match args.bandwidth_rule {
        RuleArg::SilvermanN => BandwidthRule::SilvermanN,
        RuleArg::SilvermanNt => BandwidthRule::SilvermanNT,
    };
    let panel = panel::load_panel_path(&args.data, &Schema::default())
        .map_err(|e| fail(EXIT_DATA, format!("panel: {}: {e}", kind(&e))))?;
    let fits = solver::fit_path(&panel, &taus, &SolverOptions::default())
        .map_err(|e| fail(EXIT_NUMERIC, format!("solver: {}: {e}", kind(&e))))?;

    let mut reports = Vec::with_capacity(taus.len());
    for (fit, &tau) in fits.into_iter().zip(&taus) {
        let fit = fit.map_err(|e| fail(EXIT_NUMERIC, format!("solver: {}: {e}", kind(&e))))?;
        reports.push(fit_report(&panel, &fit, tau, rule, args)?);
    }

    let io = |e: std::io::Error| fail(EXIT_NUMERIC, format!("cannot write output: {e}"));
    if args.json {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        writeln!(out, "{text}").map_err(io)?;
    } else if args.csv {
        write_fit_csv(&reports, out).map_err(|e| fail(EXIT_NUMERIC, format!("cannot write output: {e}")))?;
    } else {
        out.write_all(render_fit_text(&reports).as_bytes()).map_err(io)?;
    }
    Ok(())
}

fn fit_report(
    panel: &PanelData,
    fit: &solver::FeqrFit,
    tau: QuantileLevel,
    rule: BandwidthRule,
    args: &FitArgs,
) -> Result<FitReport, Failure> {
    let cov_err = |e: covariance::CovarianceError| fail(EXIT_NUMERIC, format!("covariance: {}: {e}", kind(&e)));
    let inf_err = |e: inference::InferenceError| fail(EXIT_NUMERIC, format!("inference: {}: {e}", kind(&e)));
    let kernel = KernelSpec::from_fit(fit, rule).map_err(cov_err)?;
    let mut methods = Vec::new();
    if args.method != MethodArg::Standard {
        methods.push(CovarianceMethod::Robust);
    }
    if args.method != MethodArg::Robust {
        methods.push(CovarianceMethod::Standard);
    }
    let mut intervals = Vec::new();
    for m in methods {
        let cov = match m {
            CovarianceMethod::Robust => covariance::robust_covariance(panel, fit, tau, &kernel),
            CovarianceMethod::Standard => covariance::standard_covariance(panel, fit, tau, &kernel),
        }
        .map_err(cov_err)?;
        let cis = inference::confidence_intervals(fit, &cov, args.level).map_err(inf_err)?;
        intervals.extend(cis.iter().map(IntervalReport::from));
    }
    let c = &fit.certificate;
    Ok(FitReport {
        tau: tau.value(),
        beta_hat: fit.beta().to_vec(),
        alpha_hat: args.alphas.then(|| fit.alpha().to_vec()),
        objective: fit.objective_value,
        bandwidth: kernel.bandwidth,
        certificate: CertificateSummary {
            passes: c.passes,
            max_h1: c.max_h1,
            bound_h1: c.bound_h1,
            h2_norm: c.h2_norm,
            bound_h2: c.bound_h2,
        },
        intervals,
    })
}

/// One row per (tau, method, coefficient) interval.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FitCsvRow {
    pub tau: f64,
    pub method: String,
    pub coefficient: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub bandwidth: f64,
    pub objective: f64,
    pub certificate_passes: bool,
}

fn write_fit_csv(reports: &[FitReport], out: &mut dyn Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for ci in &r.intervals {
            w.serialize(FitCsvRow {
                tau: r.tau,
                method: ci.method.clone(),
                coefficient: ci.coefficient,
                estimate: ci.estimate,
                std_error: ci.std_error,
                lower: ci.lower,
                upper: ci.upper,
                level: ci.level,
                bandwidth: r.bandwidth,
                objective: r.objective,
                certificate_passes: r.certificate.passes,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn render_fit_text(reports: &[FitReport]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "tau = {}", r.tau);
        let _ = writeln!(s, "  objective  {:.10}", r.objective);
        let _ = writeln!(s, "  bandwidth  {:.6}", r.bandwidth);
        let _ = writeln!(
            s,
            "  certificate {}  (max|H1| {:.4} <= {:.4}, |H2| {:.4} <= {:.4})",
            if r.certificate.passes { "ok" } else { "FAILED" },
            r.certificate.max_h1,
            r.certificate.bound_h1,
            r.certificate.h2_norm,
            r.certificate.bound_h2
        );
        let _ = writeln!(s, "  {:<9} {:>4} {:>12} {:>12} {:>12} {:>12}", "method", "coef", "estimate", "std.err", "lower", "upper");
        for ci in &r.intervals {
            let _ = writeln!(
                s,
                "  {:<9} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                ci.method, ci.coefficient, ci.estimate, ci.std_error, ci.lower, ci.upper
            );
        }
        if let Some(alpha) = &r.alpha_hat {
            let _ = writeln!(s, "  alpha_hat:");
            for (i, a) in alpha.iter().enumerate() {
                let _ = writeln!(s, "    {i:>6} {a:.6}");
            }
        }
        s.push('\n');
    }
    s
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut studies =
        simulation::load_config(&args.config).map_err(|e| fail(EXIT_USAGE, format!("simulation: {e}")))?;
    for s in &mut studies {
        if let Some(w) = args.workers {
            s.workers = w;
        }
        if let Some(r) = args.replications {
            s.replications = r;
        }
        s.validate().map_err(|e| fail(EXIT_USAGE, format!("simulation: {e}")))?;
    }
    let report = simulation::run_grid(&studies).map_err(|e| match e {
        SimulationError::StudyAborted { .. } => fail(EXIT_ABORTED, format!("simulation: StudyAborted: {e}")),
        SimulationError::InvalidConfig(_) => fail(EXIT_USAGE, format!("simulation: {e}")),
        other => fail(EXIT_NUMERIC, format!("simulation: {}: {other}", kind(&other))),
    })?;
    simulation::write_outputs(&report, &args.out).map_err(|e| fail(EXIT_NUMERIC, format!("simulation: {e}")))?;
    let _ = out.write_all(simulation::render_tables(&report).as_bytes());
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let dgp = DgpConfig {
        n_units: args.n,
        n_periods: args.t,
        common_shock: !args.no_common_shock,
        base_seed: args.seed,
        ..DgpConfig::default()
    };
    dgp.validate().map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    let panel = simulation::generate_panel(&dgp, args.replication).map_err(|e| fail(EXIT_NUMERIC, e.to_string()))?;
    panel::save_panel_path(&panel, &args.out).map_err(|e| fail(EXIT_DATA, format!("panel: {}: {e}", kind(&e))))
}
