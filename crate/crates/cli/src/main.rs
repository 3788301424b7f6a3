mod commands;
mod output;
mod range;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "fg", version, about = "Floating Gossip laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the analytic engine gets its contact statistics.
#[derive(Args, Clone)]
pub struct ContactSource {
    /// Contact model produced by `fg calibrate`.
    #[arg(long)]
    pub contact_model: Option<PathBuf>,
    /// Use an exponential contact-duration model derived from the kinematics
    /// when no contact model is given.
    #[arg(long)]
    pub exponential_fallback: bool,
}

#[derive(Args, Clone)]
pub struct SimulationArgs {
    #[arg(long, default_value_t = 20)]
    pub runs: u32,
    /// Seed of the first run; run i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub slots: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Analytic,
    Simulate,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the contact model with a mobility-only run.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Simulated seconds.
        #[arg(long, default_value_t = 20_000.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the mean-field model for one configuration.
    Analytic {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        contact: ContactSource,
        /// Seed of the staleness Monte Carlo.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Largest model count of the capacity table.
        #[arg(long, default_value_t = 10)]
        m_max: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run replicate simulations and write raw series and metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimulationArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Vary one numeric config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON path of the key, such as `model_size` or `protocol.t0_s`.
        #[arg(long)]
        param: String,
        /// `a:b:n`, `log:a:b:n` or a comma list.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, value_enum, default_value_t = SweepMode::Analytic)]
        mode: SweepMode,
        /// Repeat the sweep for each model count.
        #[arg(long)]
        models: Option<String>,
        #[command(flatten)]
        contact: ContactSource,
        #[command(flatten)]
        sim: SimulationArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stability left-hand side over a grid of model counts and rates.
    StabilityMap {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        contact: ContactSource,
        #[arg(long = "m")]
        m_range: String,
        #[arg(long = "lambda")]
        lambda_range: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learning capacity, optionally over a range of observation rates.
    Capacity {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        contact: ContactSource,
        #[arg(long, default_value_t = 50)]
        m_max: u32,
        #[arg(long = "lambda")]
        lambda_range: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic predictions next to simulated estimates.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        contact: ContactSource,
        #[command(flatten)]
        sim: SimulationArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("FG_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!("FG_THREADS must be a positive integer, got `{v}`"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Calibrate {
            config,
            duration,
            seed,
            out,
        } => commands::calibrate(&config, duration, seed, &out),
        Command::Analytic {
            config,
            contact,
            seed,
            m_max,
            out,
        } => commands::analytic(&config, &contact, seed, m_max, &out),
        Command::Simulate {
            config,
            sim,
            out_dir,
        } => commands::simulate(&config, &sim, &out_dir),
        Command::Sweep {
            config,
            param,
            values,
            mode,
            models,
            contact,
            sim,
            out,
        } => commands::sweep(
            &config,
            &param,
            &values,
            mode,
            models.as_deref(),
            &contact,
            &sim,
            &out,
        ),
        Command::StabilityMap {
            config,
            contact,
            m_range,
            lambda_range,
            out,
        } => commands::stability_map(&config, &contact, &m_range, &lambda_range, &out),
        Command::Capacity {
            config,
            contact,
            m_max,
            lambda_range,
            out,
        } => commands::capacity(&config, &contact, m_max, lambda_range.as_deref(), &out),
        Command::Compare {
            config,
            contact,
            sim,
            out,
        } => commands::compare(&config, &contact, &sim, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if let Some(d) = &e.detail {
                eprintln!("{}", serde_json::to_string(d).unwrap_or_default());
            }
            ExitCode::from(e.code)
        }
    }
}
