use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covlab_core::AngleUnit;

mod commands;

/// Covariance models over geographic x environmental domains.
///
/// Exit codes: 0 on success (including a "known-invalid" verdict from
/// `validate`), 2 when invalidity is witnessed numerically, 1 on usage or
/// data errors.
#[derive(Parser, Debug)]
#[command(name = "covlab", author, version)]
struct Cli {
    /// Directory for output artifacts and the run report.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Look up a model's validity on a domain.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        domain: String,
    },
    /// Certify the Gram matrix of a model on a sample file.
    Gram {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: ConfigArgs,
    },
    /// Simple kriging of a sample file onto targets.
    Krige {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: ConfigArgs,
        /// Target file (same coordinate scheme as the samples).
        #[arg(long, conflicts_with = "grid")]
        targets: Option<PathBuf>,
        /// Kriging onto an N x N grid spanning the samples.
        #[arg(long)]
        grid: Option<usize>,
        /// Known mean; defaults to the sample mean.
        #[arg(long)]
        mean: Option<f64>,
    },
    /// Draw Gaussian realisations at the samples of a file.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fit a model to the binned empirical covariance of a sample file.
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: ConfigArgs,
        #[arg(long)]
        bin_width: f64,
        #[arg(long)]
        max_lag: f64,
        /// Domain whose validity box constrains the fit; inferred from the
        /// file when omitted.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Search for a configuration on which a model is not positive definite.
    Counterexample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, required_unless_present = "grid_312")]
        domain: Option<String>,
        /// Use the three-site, three-value reference grid near (-60, 60).
        #[arg(long)]
        grid_312: bool,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value_t = 30)]
        max_points: usize,
        #[arg(long, value_enum, default_value_t = Unit::Radians)]
        angle_unit: Unit,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Randomized negative-definiteness and subadditivity checks of a
    /// variogram given as a JSON expression tree.
    NdTest {
        /// JSON file with the expression tree.
        #[arg(long, conflicts_with = "variogram")]
        variogram_file: Option<PathBuf>,
        /// Inline JSON expression tree.
        #[arg(long)]
        variogram: Option<String>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 12)]
        points: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate a clustered synthetic sample file.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1000.0)]
        box_km: f64,
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha_g: Option<f64>,
    #[arg(long)]
    alpha_e: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Model as JSON; takes precedence over the parameter flags.
    #[arg(long)]
    model_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Sample CSV with x,y or lon,lat columns.
    #[arg(long, required_unless_present = "grid_312")]
    samples: Option<PathBuf>,
    /// Use the three-site, three-value reference grid near (-60, 60).
    #[arg(long)]
    grid_312: bool,
    #[arg(long, value_enum, default_value_t = Unit::Radians)]
    angle_unit: Unit,
}

#[derive(Args, Debug, Clone, Copy)]
struct SeedArg {
    #[arg(long, env = "COVLAB_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Unit {
    Radians,
    Degrees,
}

impl From<Unit> for AngleUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Radians => AngleUnit::Radians,
            Unit::Degrees => AngleUnit::Degrees,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
