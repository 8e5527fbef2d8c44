//! `cogcn`: synthesize corpora, train and evaluate frame-graph classifiers,
//! export graphs and run diagnostics.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cogcn::GraphKind;

#[derive(Debug, Parser)]
#[command(
    name = "cogcn",
    version,
    about = "Cosine-similarity graph convolutional classifier for frame-level features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus to a directory.
    Synth(SynthArgs),
    /// Leave-one-speaker-out training, or a single held-out speaker.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export the graph built from one utterance.
    Graph(GraphArgs),
    /// Parameter accounting and gradient checks.
    #[command(subcommand)]
    Diag(DiagCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 20)]
    pub utts: usize,
    #[arg(long, default_value_t = 20)]
    pub frames_lo: usize,
    #[arg(long, default_value_t = 40)]
    pub frames_hi: usize,
    /// Fraction of frames drawn from the shared vacuum cluster.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 88)]
    pub d: usize,
    #[arg(long, default_value_t = 4.0)]
    pub sep: f64,
    #[arg(long, env = "COGCN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphArg {
    Cosine,
    Temporal,
}

impl From<GraphArg> for GraphKind {
    fn from(g: GraphArg) -> Self {
        match g {
            GraphArg::Cosine => GraphKind::Cosine,
            GraphArg::Temporal => GraphKind::Temporal,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    pub graph: GraphArg,
    /// Fix the cosine threshold instead of searching the grid.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.55,0.6")]
    pub gamma_grid: Vec<f64>,
    /// Fix the number of message-passing layers instead of searching the grid.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub k_grid: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub z: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long)]
    pub no_pre: bool,
    /// Aggregate over neighbours only, without the node itself.
    #[arg(long)]
    pub no_self: bool,
    #[arg(long, env = "COGCN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Run only the fold that tests on this speaker.
    #[arg(long)]
    pub holdout: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Print the metrics JSON on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Restrict to these speakers (repeatable).
    #[arg(long = "speaker")]
    pub speakers: Vec<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub utt: String,
    #[arg(long, conflicts_with = "temporal")]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub temporal: bool,
    /// Directory for graph.dot, graph.json and nodes.csv. Without it the DOT
    /// text goes to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Print the JSON form on stdout instead of DOT.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Exact learnable parameter count.
    Params(ParamsArgs),
    /// Finite-difference check of the hand-written gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 88)]
    pub d: usize,
    #[arg(long, default_value_t = 128)]
    pub z: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub c: usize,
    #[arg(long)]
    pub no_pre: bool,
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = "COGCN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Eval(a) => commands::eval(a),
        Command::Graph(a) => commands::graph(a),
        Command::Diag(DiagCommand::Params(a)) => commands::params(a),
        Command::Diag(DiagCommand::Gradcheck(a)) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
