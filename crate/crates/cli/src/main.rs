use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod lattice_cmds;
mod model_cmds;

#[derive(Parser)]
#[command(name = "latsa", version, about = "Lattice self-attention workbench")]
struct Cli {
    /// Lattice input format.
    #[arg(long, global = true, value_enum, default_value_t = InputFormat::Json)]
    format: InputFormat,
    /// How PLF edge scores are read.
    #[arg(long, global = true, value_enum, default_value_t = PlfScores::Linear)]
    plf_prob: PlfScores,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Json,
    Plf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlfScores {
    Linear,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskKindArg {
    Bin,
    Prob,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    Fwd,
    Bwd,
    Nondir,
}

#[derive(Clone, Copy, ValueEnum)]
enum PositionsArg {
    Longest,
    Topological,
}

#[derive(Subcommand)]
enum Command {
    /// Check lattices for structural and probabilistic validity.
    Validate {
        /// Input file; stdin when absent or `-`.
        input: Option<PathBuf>,
    },
    /// Dump reachability masks as TSV (rows are queries).
    Masks {
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MaskKindArg::Prob)]
        kind: MaskKindArg,
        #[arg(long, value_enum, default_value_t = DirArg::Fwd)]
        dir: DirArg,
    },
    /// Print node positions, one lattice per line, in node order.
    Positions {
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PositionsArg::Longest)]
        kind: PositionsArg,
    },
    /// Print node marginals as `node<TAB>token<TAB>probability`.
    Marginals { input: Option<PathBuf> },
    /// Print tokens in topological order, one lattice per line.
    Linearize { input: Option<PathBuf> },
    /// Render lattices as Graphviz DOT.
    Dot { input: Option<PathBuf> },
    /// Generate a synthetic noisy-lattice corpus.
    GenData(model_cmds::GenDataArgs),
    /// Train a lattice-to-sequence model.
    Train(model_cmds::TrainArgs),
    /// Translate source lines with a trained model.
    Translate(model_cmds::TranslateArgs),
    /// Score a model on a parallel corpus.
    Eval(model_cmds::EvalArgs),
    /// Measure encoder speed and mask computation growth.
    Bench(model_cmds::BenchArgs),
    /// Run the desk-scale experiment protocol.
    Experiment(model_cmds::ExperimentArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = match cli.format {
        InputFormat::Json => latsa_core::lattice::Format::Json,
        InputFormat::Plf => latsa_core::lattice::Format::Plf(match cli.plf_prob {
            PlfScores::Linear => latsa_core::lattice::PlfProb::Linear,
            PlfScores::Log => latsa_core::lattice::PlfProb::Log,
        }),
    };
    let result = match cli.command {
        Command::Validate { input } => lattice_cmds::validate(input.as_deref(), format),
        Command::Masks { input, kind, dir } => {
            lattice_cmds::masks(input.as_deref(), format, kind, dir)
        }
        Command::Positions { input, kind } => {
            lattice_cmds::positions(input.as_deref(), format, kind)
        }
        Command::Marginals { input } => lattice_cmds::marginals(input.as_deref(), format),
        Command::Linearize { input } => lattice_cmds::linearize(input.as_deref(), format),
        Command::Dot { input } => lattice_cmds::dot(input.as_deref(), format),
        Command::GenData(args) => model_cmds::gen_data(&args),
        Command::Train(args) => model_cmds::train(&args, format),
        Command::Translate(args) => model_cmds::translate(&args, format),
        Command::Eval(args) => model_cmds::eval(&args, format),
        Command::Bench(args) => model_cmds::bench(&args),
        Command::Experiment(args) => model_cmds::experiment(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
