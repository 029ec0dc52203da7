//! `rfcd` — experiment driver for the random-feature consistency-distillation
//! laboratory. Subcommands estimate the teacher/flow constants, emit operator
//! spectra and per-mode diagnostics, sweep the ridge and the sample ratio,
//! integrate the student gradient flow, and cross-check every closed form
//! against brute-force Monte Carlo.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfcd::{Activation, BetaConvention, Error, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rfcd",
    version,
    about = "Random-feature consistency-distillation laboratory",
    after_help = "Exit codes: 0 success, 2 validation error, 3 numerical error, 4 resource cap."
)]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SharedArgs {
    /// JSON config mirroring the experiment fields (unknown keys rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; all substreams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV/JSON artifacts and the run manifest.
    #[arg(long, global = true, default_value = "rfcd-out")]
    out: PathBuf,
    /// Promote warnings (variance clamps, degenerate budgets, trace
    /// fallbacks) to errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Isotropic-shift convention for β.
    #[arg(long, global = true, value_enum)]
    beta_convention: Option<BetaArg>,
    /// Diagnostic ridge γ (the closed-form operator itself stays at ridge 0).
    #[arg(long, global = true)]
    ridge: Option<f64>,
    /// Worker threads (default: RFCD_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ambient dimension d.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Feature ratio p/d.
    #[arg(long, global = true)]
    psi_p: Option<f64>,
    /// Sample ratio n/d.
    #[arg(long, global = true)]
    psi_n: Option<f64>,
    /// Teacher diffusion time t'.
    #[arg(long, global = true)]
    t_prime: Option<f64>,
    /// One-step size Δt.
    #[arg(long, global = true)]
    dt_step: Option<f64>,
    #[arg(long, global = true, value_enum)]
    activation: Option<ActArg>,
    /// Mem/Gen eigenvalue threshold.
    #[arg(long, global = true)]
    lambda_th: Option<f64>,
    /// Monte Carlo budget for the teacher constants.
    #[arg(long, global = true)]
    mc_constants: Option<usize>,
    /// Monte Carlo budget for the flow moments.
    #[arg(long, global = true)]
    mc_flow: Option<usize>,
    /// Spectral underflow-discard threshold.
    #[arg(long, global = true)]
    atom_eps: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BetaArg {
    Theorem,
    PfDrift,
}

impl From<BetaArg> for BetaConvention {
    fn from(v: BetaArg) -> Self {
        match v {
            BetaArg::Theorem => BetaConvention::Theorem,
            BetaArg::PfDrift => BetaConvention::PfDrift,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ActArg {
    Tanh,
    Identity,
    Erf,
}

impl From<ActArg> for Activation {
    fn from(v: ActArg) -> Self {
        match v {
            ActArg::Tanh => Activation::Tanh,
            ActArg::Identity => Activation::Identity,
            ActArg::Erf => Activation::Erf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TargetArg {
    /// Teacher curvature U.
    U,
    /// One-step distillation curvature U_cd.
    Ucd,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum B0Arg {
    /// Start the flow from the converged teacher top layer.
    Teacher,
    /// Start from an i.i.d. standard normal layer.
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate teacher constants, flow moments, step coefficients, and β.
    Constants,
    /// Eigen-spectrum (histogram + atoms) of U or U_cd.
    Spectrum {
        #[arg(long, value_enum, default_value_t = TargetArg::Ucd)]
        target: TargetArg,
        /// Histogram bin count (default: Freedman–Diaconis).
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Per-mode diagnostics (a_i, b_i, α_i, labels, fracBmem, Share⁺_mem).
    Modes {
        /// Force μ1 = 0 in the response (isolates the visibility term).
        #[arg(long)]
        mu1_zero: bool,
    },
    /// Median Gen fracBmem across a ridge grid, with γ* selection.
    RidgeSweep {
        /// Ascending comma-separated γ grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Leakage tolerance defining γ*.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
    /// Mode diagnostics across sample ratios ψ_n at fixed ψ_p.
    PsiSweep {
        /// Comma-separated ψ_n values, visited in the order given.
        #[arg(long, value_delimiter = ',', default_values_t = [16.0, 8.0, 4.0])]
        psi_n_grid: Vec<f64>,
    },
    /// Closed-form student gradient flow of the one-step objective.
    Dynamics {
        /// Comma-separated absolute flow times.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 10.0, 100.0, 1000.0])]
        taus: Vec<f64>,
        #[arg(long, value_enum, default_value_t = B0Arg::Teacher)]
        b0: B0Arg,
    },
    /// Brute-force Monte Carlo validation of the closed forms.
    ///
    /// Without an explicit scale (--config/--d/--psi-p/--psi-n) this runs at
    /// the small oracle scale d=24, ψ_p=8, ψ_n=4.
    Validate {
        /// Lift the oracle size caps (p ≤ 512 matrices, p ≤ 256 rows).
        #[arg(long)]
        allow_large: bool,
        /// Forward-noise repetitions per training point.
        #[arg(long, default_value_t = 4000)]
        reps: usize,
        /// Row samples for the second-moment decomposition check.
        #[arg(long, default_value_t = 100_000)]
        decomposition_samples: usize,
        /// Scalar pair samples for the empirical (a1, a0).
        #[arg(long, default_value_t = 1_000_000)]
        pair_samples: usize,
        /// Largest eigenvalues compared between closed form and oracle.
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> rfcd::Result<()> {
    let threads = resolve_threads(&cli.shared)?;
    rfcd::linalg::init_blas_single_thread();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();
    let scale_overridden = cli.shared.config.is_some()
        || cli.shared.d.is_some()
        || cli.shared.psi_p.is_some()
        || cli.shared.psi_n.is_some();
    let config = resolve_config(&cli.shared)?;
    config.validate()?;
    let invocation: Vec<String> = std::env::args().skip(1).collect();
    let ctx = commands::Ctx::new(config, cli.shared.out.clone(), cli.shared.strict, threads, invocation)?;
    match cli.command {
        Command::Constants => commands::constants(ctx),
        Command::Spectrum { target, bins } => commands::spectrum(ctx, target, bins),
        Command::Modes { mu1_zero } => commands::modes(ctx, mu1_zero),
        Command::RidgeSweep { grid, tau } => {
            let grid = grid.unwrap_or_else(|| vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
            commands::ridge_sweep(ctx, grid, tau)
        }
        Command::PsiSweep { psi_n_grid } => commands::psi_sweep(ctx, psi_n_grid),
        Command::Dynamics { taus, b0 } => commands::dynamics(ctx, taus, b0),
        Command::Validate { allow_large, reps, decomposition_samples, pair_samples, top_k } => {
            commands::validate(
                ctx,
                commands::ValidateOpts {
                    allow_large,
                    reps,
                    decomposition_samples,
                    pair_samples,
                    top_k,
                    scale_overridden,
                },
            )
        }
    }
}

fn resolve_threads(shared: &SharedArgs) -> rfcd::Result<usize> {
    let from_env = || -> rfcd::Result<Option<usize>> {
        match std::env::var("RFCD_THREADS") {
            Ok(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| Error::validation(format!("RFCD_THREADS must be an integer, got {v:?}"))),
            Err(_) => Ok(None),
        }
    };
    let threads = match shared.threads {
        Some(t) => t,
        None => from_env()?.unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }),
    };
    if threads == 0 {
        return Err(Error::validation("threads must be ≥ 1"));
    }
    Ok(threads)
}

fn resolve_config(shared: &SharedArgs) -> rfcd::Result<ExperimentConfig> {
    let mut config = match &shared.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::validation(format!("config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = shared.seed {
        config.seed = v;
    }
    if let Some(v) = shared.beta_convention {
        config.beta_convention = v.into();
    }
    if let Some(v) = shared.ridge {
        config.ridge_gamma = v;
    }
    if let Some(v) = shared.d {
        config.d = v;
    }
    if let Some(v) = shared.psi_p {
        config.psi_p = v;
    }
    if let Some(v) = shared.psi_n {
        config.psi_n = v;
    }
    if let Some(v) = shared.t_prime {
        config.t_prime = v;
    }
    if let Some(v) = shared.dt_step {
        config.dt_step = v;
    }
    if let Some(v) = shared.activation {
        config.activation = v.into();
    }
    if let Some(v) = shared.lambda_th {
        config.lambda_th = v;
    }
    if let Some(v) = shared.mc_constants {
        config.mc_constants = v;
    }
    if let Some(v) = shared.mc_flow {
        config.mc_flow = v;
    }
    if let Some(v) = shared.atom_eps {
        config.atom_eps = v;
    }
    Ok(config)
}
