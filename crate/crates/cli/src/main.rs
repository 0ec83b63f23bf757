mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use manifest::EvaluatorKind;

/// Default output directory for `explore` and `exhaustive` when neither the
/// command line nor the manifest names one.
pub const OUT_DIR_ENV: &str = "NNDSE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "nndse", version, about = "Surrogate-guided exploration of neural-network hyper-parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run (or resume) a surrogate-guided exploration.
    Explore(ExploreArgs),
    /// Evaluate every configuration of a small space and write the exact front.
    Exhaustive(ExhaustiveArgs),
    /// Compare an approximate front or an exploration log with a reference front.
    Adrs(AdrsArgs),
    /// Count weights and MACs of a topology.
    Cost(CostArgs),
}

#[derive(Args, Debug, Default)]
pub struct SpaceArgs {
    /// Bundled design space.
    #[arg(long, conflicts_with = "space")]
    pub preset: Option<String>,
    /// Design space file (TOML).
    #[arg(long)]
    pub space: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EvaluatorArgs {
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    /// Directory holding the MNIST IDX files (toy evaluator).
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Seed of the toy trainer.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// External evaluator program.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Argument passed to the external program (repeatable).
    #[arg(long = "program-arg", allow_hyphen_values = true)]
    pub program_args: Vec<String>,
    /// Per-evaluation timeout of the external program, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ExploreArgs {
    /// Run manifest (TOML); command-line options override its fields.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub eval: EvaluatorArgs,
    /// Number of evaluated candidates.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Proposal standard deviation as a fraction of each parameter's index range.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Categorical resampling probability.
    #[arg(long)]
    pub p_cat: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub weight_cost: Option<f64>,
    #[arg(long)]
    pub mac_cost: Option<f64>,
    /// Proposals allowed per iteration before the run stalls.
    #[arg(long)]
    pub proposal_cap: Option<usize>,
    /// Reference front CSV; enables the ADRS curve.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output directory [default: $NNDSE_OUT_DIR, else ./nndse-out].
    #[arg(long, conflicts_with = "resume")]
    pub out: Option<PathBuf>,
    /// Continue the run stored in this output directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Do not print progress.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct ExhaustiveArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub eval: EvaluatorArgs,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Largest space size evaluated.
    #[arg(long, default_value_t = nndse::explorer::DEFAULT_EXHAUSTIVE_CEILING)]
    pub ceiling: u128,
    #[arg(long)]
    pub weight_cost: Option<f64>,
    #[arg(long)]
    pub mac_cost: Option<f64>,
    /// Output directory [default: $NNDSE_OUT_DIR, else ./nndse-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdrsArgs {
    /// Exact front CSV (an all-points CSV is reduced to its front).
    #[arg(long)]
    pub reference: PathBuf,
    /// Approximate front CSV.
    #[arg(long, required_unless_present = "log", conflicts_with = "log")]
    pub front: Option<PathBuf>,
    /// Exploration log; its explored front is compared after every iteration.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Where to write the iteration/ADRS curve [default: adrs.csv next to the log].
    #[arg(long, requires = "log")]
    pub curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Fully connected layer sizes, input first: `784,20,10`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["input", "conv", "fc", "outputs"])]
    pub mlp: Option<Vec<usize>>,
    /// CNN input shape `CxHxW`, e.g. `1x28x28`.
    #[arg(long, requires = "outputs")]
    pub input: Option<String>,
    /// Convolution stage `filters:kernel:pool` (repeatable, in order).
    #[arg(long, requires = "input")]
    pub conv: Vec<String>,
    /// Hidden fully connected sizes after the convolutions.
    #[arg(long, value_delimiter = ',', requires = "input")]
    pub fc: Vec<usize>,
    /// Output classes.
    #[arg(long, requires = "input")]
    pub outputs: Option<usize>,
    #[arg(long)]
    pub weight_cost: Option<f64>,
    #[arg(long)]
    pub mac_cost: Option<f64>,
}

/// Failure classes mapped to exit status.
pub enum Failure {
    /// Invalid invocation or manifest: exit 2.
    Usage(anyhow::Error),
    /// The command started but could not finish: exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<nndse::Error> for Failure {
    fn from(e: nndse::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn print_usage(name: Option<&str>) {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = match name.and_then(|n| cmd.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage(),
        None => cmd.render_usage(),
    };
    eprintln!("{usage}");
    match name {
        Some(n) => eprintln!("For more information, try 'nndse {n} --help'."),
        None => eprintln!("For more information, try 'nndse --help'."),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            if text.contains("Usage:") {
                eprint!("{text}");
            } else {
                eprintln!("{}\n", text.lines().next().unwrap_or("error: invalid arguments"));
                let sub = std::env::args()
                    .skip(1)
                    .find(|a| Cli::command().find_subcommand(a).is_some());
                print_usage(sub.as_deref());
            }
            return ExitCode::from(2);
        }
    };
    let (name, result) = match cli.command {
        Command::Explore(a) => ("explore", commands::explore(a)),
        Command::Exhaustive(a) => ("exhaustive", commands::exhaustive(a)),
        Command::Adrs(a) => ("adrs", commands::adrs(a)),
        Command::Cost(a) => ("cost", commands::cost(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}\n");
            print_usage(Some(name));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
