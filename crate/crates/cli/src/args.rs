use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "sdjls",
    version,
    about = "Chance-constrained receding-horizon control of state-dependent jump linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize pre-stabilizing gains and write a gains file.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = sdjls_core::lmi::DEFAULT_MAX_ITERS)]
        max_iters: usize,
    },
    /// Solve one controller step and print the solution.
    Step {
        #[command(flatten)]
        common: Common,
        /// Current mode (1-based).
        #[arg(long)]
        theta: usize,
        /// Current state, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        x: Vec<f64>,
        /// Time index.
        #[arg(long, default_value_t = 0)]
        k: usize,
    },
    /// Roll out one closed-loop trajectory and write the per-step CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run index within the seeded ensemble.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Run a Monte Carlo campaign and write aggregate statistics.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Run the ensemble on one thread (results are identical).
        #[arg(long)]
        serial: bool,
    },
    /// Run the bundled benchmark end to end and write a summary report.
    ReproducePaper {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        serial: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Configuration file; the bundled benchmark when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gains file, or `published` for the bundled gain table. Gains are
    /// synthesized on the fly when omitted.
    #[arg(long)]
    pub gains: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Chance-constraint level.
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long, conflicts_with = "individual")]
    pub joint: bool,
    #[arg(long)]
    pub individual: bool,
}
