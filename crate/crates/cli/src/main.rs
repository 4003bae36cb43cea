//! `hpconv`: run Monte Carlo verifications, print interval plans, evaluate deviations.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hpconv_core::bandit::{bandit_deviation, BanditConfig};
use hpconv_core::concentration::Guarantee;
use hpconv_core::harness::{emit_csv, run_experiment, DynamicConfig, ExperimentSpec, PCA_X0};
use hpconv_core::linalg::Vector;
use hpconv_core::pca::Spectrum;
use hpconv_core::schedule::{
    pca_deviation_formula, pca_uniform_plan, sgd_interval_deviation, sgd_uniform_plan,
    verify_pca_plan, verify_sgd_plan, IntervalPlan, PcaDeviationVariant, PlanReport,
};
use hpconv_core::sgd::SgdConfig;
use hpconv_core::toy::TOY_X0;
use hpconv_core::Error;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "hpconv",
    version,
    about = "Check high-probability convergence rates by simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate many trials and test the claimed rate.
    Run(RunArgs),
    /// Build an interval plan and verify its pull-out and improvement conditions.
    Schedule(ScheduleArgs),
    /// Evaluate a closed-form per-interval deviation.
    Deviation(DeviationArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DynamicKind {
    Toy,
    Sgd,
    Pca,
    Bandit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PlanKind {
    Sgd,
    Pca,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DeviationKind {
    Sgd,
    Pca,
    Bandit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GuaranteeArg {
    Last,
    Uniform,
}

impl From<GuaranteeArg> for Guarantee {
    fn from(g: GuaranteeArg) -> Self {
        match g {
            GuaranteeArg::Last => Guarantee::Last,
            GuaranteeArg::Uniform => Guarantee::Uniform,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum VariantArg {
    GammaScaled,
    Unscaled,
}

impl From<VariantArg> for PcaDeviationVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::GammaScaled => PcaDeviationVariant::GammaScaled,
            VariantArg::Unscaled => PcaDeviationVariant::Unscaled,
        }
    }
}

/// Flags shared by the dynamics; each dynamic reads the ones it uses.
#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Dimension (sgd, bandit).
    #[arg(long)]
    dim: Option<usize>,
    /// Strong convexity (sgd) or regularizer (bandit).
    #[arg(long)]
    lambda: Option<f64>,
    /// Gradient bound G (sgd).
    #[arg(long = "g")]
    g: Option<f64>,
    /// Domain radius (sgd).
    #[arg(long)]
    radius: Option<f64>,
    /// Oracle noise radius (sgd).
    #[arg(long)]
    noise: Option<f64>,
    /// Comma-separated eigenvalues, largest first (pca).
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    /// Subspace dimension k (pca).
    #[arg(long)]
    k: Option<usize>,
    /// Starting potential (toy, pca).
    #[arg(long)]
    x0: Option<f64>,
    /// Actions per round (bandit).
    #[arg(long)]
    actions: Option<usize>,
    /// Bound on action norms (bandit).
    #[arg(long)]
    l_bound: Option<f64>,
    /// Bound on the parameter norm (bandit).
    #[arg(long)]
    l_star: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_enum)]
    dynamic: DynamicKind,
    #[arg(long, value_enum, default_value = "uniform")]
    guarantee: GuaranteeArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Steps per trial; defaults to 10⁴, or two planned intervals for pca.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix for `<out>.checkpoints.csv` and `<out>.trials.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run trials on one thread.
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long, value_enum)]
    dynamic: PlanKind,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 20)]
    intervals: usize,
    /// Write the plan as CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deviation form used to verify pca plans.
    #[arg(long, value_enum, default_value = "unscaled")]
    variant: VariantArg,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct DeviationArgs {
    #[arg(long, value_enum)]
    kind: DeviationKind,
    /// Interval start (sgd, pca).
    #[arg(long, default_value_t = 0)]
    t0: u64,
    /// Interval end.
    #[arg(long)]
    t1: u64,
    /// Threshold Λ.
    #[arg(long)]
    threshold: f64,
    /// Per-interval confidence δ'.
    #[arg(long)]
    delta: f64,
    /// Rate γ (pca).
    #[arg(long)]
    gamma: Option<f64>,
    /// Top eigenvalue (pca).
    #[arg(long)]
    lambda_top: Option<f64>,
    /// Eigengap (pca).
    #[arg(long)]
    gap: Option<f64>,
    /// Step size η (bandit, defaults to λ/L²).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum, default_value = "gamma-scaled")]
    variant: VariantArg,
    #[command(flatten)]
    model: ModelArgs,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn sgd_config(m: &ModelArgs) -> SgdConfig {
    let d = SgdConfig::default();
    let dim = m.dim.unwrap_or(d.dim);
    SgdConfig {
        dim,
        lambda: m.lambda.unwrap_or(d.lambda),
        g: m.g.unwrap_or(d.g),
        radius: m.radius.unwrap_or(d.radius),
        w_star: Vector::zeros(dim),
        noise: m.noise.unwrap_or(d.noise),
    }
}

fn spectrum(m: &ModelArgs) -> Result<Spectrum, Error> {
    match &m.spectrum {
        None if m.k.is_none() => Ok(Spectrum::default()),
        None => Err(usage("--k needs --spectrum")),
        Some(eig) => {
            let (s, rescaled) = Spectrum::normalized(eig.clone(), m.k.unwrap_or(2))?;
            if rescaled {
                eprintln!(
                    "warning: eigenvalues rescaled to sum to 1: {:?}",
                    s.eigenvalues()
                );
            }
            Ok(s)
        }
    }
}

fn bandit_config(m: &ModelArgs) -> BanditConfig {
    let d = BanditConfig::default();
    let mut cfg = BanditConfig::with_dims(m.dim.unwrap_or(d.dim), m.actions.unwrap_or(d.actions));
    cfg.lambda = m.lambda.unwrap_or(d.lambda);
    cfg.l_bound = m.l_bound.unwrap_or(d.l_bound);
    cfg.l_star = m.l_star.unwrap_or(d.l_star);
    cfg.normalize()
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let m = &args.model;
    let dynamic = match args.dynamic {
        DynamicKind::Toy => DynamicConfig::Toy {
            x0: m.x0.unwrap_or(TOY_X0),
        },
        DynamicKind::Sgd => DynamicConfig::Sgd(sgd_config(m)),
        DynamicKind::Pca => DynamicConfig::Pca {
            spectrum: spectrum(m)?,
            x0: m.x0.unwrap_or(PCA_X0),
        },
        DynamicKind::Bandit => DynamicConfig::Bandit(bandit_config(m)),
    };
    let guarantee = args.guarantee.into();
    let horizon = match args.horizon {
        Some(t) => t,
        None => ExperimentSpec::default_horizon(&dynamic, guarantee, args.delta)?,
    };
    let mut spec = ExperimentSpec::new(
        dynamic,
        guarantee,
        args.trials,
        horizon,
        args.delta,
        args.seed,
    )?;
    spec.parallel = !args.serial;
    let report = run_experiment(&spec)?;
    println!("{report}");
    if let Some(out) = &args.out {
        emit_csv(&report, out)?;
    }
    Ok(report.verdict)
}

fn print_checks(report: &PlanReport) {
    eprintln!("i,deviation,pullout_margin,improvement_margin,ok");
    for c in &report.checks {
        let dev = c.deviation.map(|d| d.to_string()).unwrap_or_default();
        eprintln!(
            "{},{dev},{},{},{}",
            c.index,
            c.pullout_margin,
            c.improvement_margin,
            c.passed()
        );
    }
}

fn schedule(args: ScheduleArgs) -> Result<bool, Error> {
    if args.intervals == 0 {
        return Err(usage("--intervals must be at least 1"));
    }
    let (plan, report): (IntervalPlan, PlanReport) = match args.dynamic {
        PlanKind::Sgd => {
            let cfg = sgd_config(&args.model);
            let plan = sgd_uniform_plan(cfg.g, cfg.lambda, args.delta, args.intervals)?;
            let report = verify_sgd_plan(&plan, cfg.g, cfg.lambda)?;
            (plan, report)
        }
        PlanKind::Pca => {
            let s = spectrum(&args.model)?;
            let plan = pca_uniform_plan(s.lambda_top(), s.gap(), args.delta, args.intervals)?;
            let report = verify_pca_plan(&plan, s.lambda_top(), s.gap(), args.variant.into())?;
            (plan, report)
        }
    };
    match &args.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            plan.write_csv(&mut f)?;
            f.flush()?;
        }
        None => plan.write_csv(io::stdout().lock())?,
    }
    print_checks(&report);
    if let Some(c) = report.first_failure() {
        eprintln!("plan check failed first at interval {}", c.index);
    }
    Ok(report.all_passed())
}

fn deviation(args: DeviationArgs) -> Result<bool, Error> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| usage(format!("--{flag} is required for this kind")))
    };
    let value = match args.kind {
        DeviationKind::Sgd => {
            let cfg = sgd_config(&args.model);
            sgd_interval_deviation(
                cfg.g,
                cfg.lambda,
                args.t0,
                args.t1,
                args.threshold,
                args.delta,
            )?
        }
        DeviationKind::Pca => pca_deviation_formula(
            args.variant.into(),
            need(args.gamma, "gamma")?,
            need(args.lambda_top, "lambda-top")?,
            need(args.gap, "gap")?,
            args.t0,
            args.t1,
            args.threshold,
            args.delta,
        )?,
        DeviationKind::Bandit => {
            let mut cfg = bandit_config(&args.model);
            if let Some(eta) = args.eta {
                cfg.eta = eta;
            }
            bandit_deviation(&cfg, args.t1, args.threshold, args.delta)?
        }
    };
    println!("{value}");
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Schedule(a) => schedule(a),
        Command::Deviation(a) => deviation(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
