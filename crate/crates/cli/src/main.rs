use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod compare;
mod context;
mod dadp;
mod joint;
mod output;
mod simulate;
mod verify;

use context::{Context, Failure};

#[derive(Parser, Debug)]
#[command(
    name = "dadp",
    version,
    about = "Dual approximate dynamic programming for coupled stochastic control"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem file (TOML)
    #[arg(long, global = true, env = "DADP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config file
    #[arg(long, global = true, env = "DADP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "DADP_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "DADP_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, env = "DADP_MAX_ITERS")]
    pub max_iters: Option<usize>,
    /// Sample paths per iteration (solve-dadp) or paths to draw (simulate, price-compare)
    #[arg(long, global = true, env = "DADP_SAMPLES")]
    pub samples: Option<usize>,
    /// Write 0 in the wall_ms column so diagnostics are byte-reproducible
    #[arg(long, global = true, env = "DADP_NO_WALL_TIME")]
    pub no_wall_time: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint DP reference solve: value table, policy and optimum
    SolveJoint,
    /// Decomposition loop: diagnostics CSV and per-iteration price checkpoints
    SolveDadp,
    /// Monte Carlo simulation of the decomposed policies of a checkpoint
    Simulate {
        /// Output directory of a solve-dadp run
        #[arg(long)]
        checkpoint: PathBuf,
        /// Iteration whose price model is used: a number, `best` or `last`
        #[arg(long, default_value = "best")]
        iterate: String,
    },
    /// Closed-form multipliers against the exact KKT solve of a quadratic instance
    VerifyProp1,
    /// Sampled multiplier paths of a checkpoint beside joint-DP marginal prices
    PriceCompare {
        #[arg(long)]
        dadp: PathBuf,
        #[arg(long)]
        joint: PathBuf,
        #[arg(long, default_value = "best")]
        iterate: String,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    let ctx = Context::load(&cli.common)?;
    match cli.command {
        Command::SolveJoint => joint::run(&ctx),
        Command::SolveDadp => dadp::run(&ctx),
        Command::Simulate {
            checkpoint,
            iterate,
        } => simulate::run(&ctx, &checkpoint, &iterate),
        Command::VerifyProp1 => verify::run(&ctx),
        Command::PriceCompare {
            dadp,
            joint,
            iterate,
        } => compare::run(&ctx, &dadp, &joint, &iterate),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
