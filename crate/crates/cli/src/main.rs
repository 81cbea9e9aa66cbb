mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Counterfactual-inpainting segmentation from image-level labels.
#[derive(Parser)]
#[command(name = "cfseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the per-section seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset as an image folder.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one pipeline stage.
    Train {
        #[arg(value_enum)]
        stage: Stage,
        #[command(flatten)]
        common: Common,
        /// Dataset directory (images/, labels.csv, ...).
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Classifier checkpoint for the GAN stage (overrides paths.classifier_checkpoint).
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Score explainers and attribution baselines on the validation split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Generator checkpoints as `PATH` (method `coin`) or `NAME=PATH`; repeatable.
        #[arg(long = "generator")]
        generators: Vec<String>,
        /// Comma-separated methods: generator names, rise, scorecam, layercam.
        #[arg(long, value_delimiter = ',', default_value = "coin,rise,scorecam,layercam")]
        methods: Vec<String>,
    },
    /// Run the loss ablation and/or the architecture ladder.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Reuse a trained classifier instead of training one.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Study::All)]
        study: Study,
    },
    /// Render figure panels from evaluation outputs.
    Figures {
        /// Directory written by `evaluate` (or one method subdirectory of it).
        #[arg(long, short)]
        reports: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Stage {
    Classifier,
    Gan,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Loss,
    Ladder,
    All,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging();
    let result = match cli.command {
        Command::GenData { common, out } => commands::gen_data(&common, &out),
        Command::Train { stage, common, data, out, classifier } => {
            commands::train(stage, &common, &data, &out, classifier.as_deref())
        }
        Command::Evaluate { common, data, out, classifier, generators, methods } => {
            commands::evaluate(&common, &data, &out, classifier.as_deref(), &generators, &methods)
        }
        Command::Ablate { common, data, out, classifier, study } => {
            commands::ablate(&common, &data, &out, classifier.as_deref(), study)
        }
        Command::Figures { reports, out } => commands::figures(&reports, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
