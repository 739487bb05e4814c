use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "calibra",
    version,
    about = "Randomized checks of calibration inequalities and flat-torus energy experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with command parameters.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed. Falls back to the config file, then CALIBRA_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Worker threads for sampling and grid work (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Emit the JSON report (the default).
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit the energy history of `torus-min` as CSV.
    #[arg(long, global = true)]
    pub csv: bool,
    /// Ten times fewer samples and trials.
    #[arg(long, global = true)]
    pub quick: bool,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Iota constancy and the identity-map calibration inequality for model forms.
    Models {
        /// kahler(q), quaternionic(q), g2 or spin7; repeatable.
        #[arg(long = "tag")]
        tags: Vec<String>,
        /// A 3- or 4-form stored as {"m", "k", "coeffs"} JSON.
        #[arg(long, value_name = "PATH")]
        form: Option<PathBuf>,
    },
    /// Randomized pointwise calibration suites.
    Verify {
        /// lichnerowicz, wirtinger, fibration, amgm, lemma41 or all.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Gradient descent on the energy over a torus homotopy class.
    TorusMin,
    /// Quadrature of the calibration integral over random perturbations.
    TorusInvariance,
    /// Cohomological lower bound for the k-energy.
    Bound {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Monte-Carlo intersection invariants of a linear torus map.
    Intersection,
    /// Every acceptance suite in sequence.
    SuiteAll {
        /// Replace the associative form by a fixture read from disk.
        #[arg(long = "g2-form", value_name = "PATH")]
        g2_form: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Models { .. } => "models",
            Command::Verify { .. } => "verify",
            Command::TorusMin => "torus-min",
            Command::TorusInvariance => "torus-invariance",
            Command::Bound { .. } => "bound",
            Command::Intersection => "intersection",
            Command::SuiteAll { .. } => "suite-all",
        }
    }
}
