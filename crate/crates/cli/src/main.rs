//! `colorfuse`: train, run and score the colorization network, and host
//! the blinded user study.

mod commands;

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use colorfuse::dataset::Split;
use colorfuse::model::ChannelScale;
use colorfuse_study::StudyError;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  runtime failure (decode errors, failed gradient check, I/O)
  2  usage error (bad flags, missing paths, invalid configuration)";

#[derive(Parser)]
#[command(name = "colorfuse", version, about = "Lab-space image colorization with a U-Net and a global-feature fusion layer")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads for data loading and evaluation [default: all cores]
    #[arg(long, global = true, env = "COLORFUSE_THREADS", value_name = "N", display_order = 100)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-layer architecture table with parameter counts
    #[command(after_help = EXIT_CODES)]
    Inspect(InspectArgs),
    /// Train on a directory-per-class dataset
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Colorize one image or every image in a directory
    #[command(after_help = EXIT_CODES)]
    Colorize(ColorizeArgs),
    /// Score weights on a dataset split
    #[command(after_help = EXIT_CODES)]
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences
    #[command(after_help = EXIT_CODES)]
    Gradcheck(GradcheckArgs),
    /// Serve the real/fake user study over HTTP
    #[command(after_help = EXIT_CODES)]
    StudyServe(StudyServeArgs),
    /// Print judged-real rates from a study log
    #[command(after_help = EXIT_CODES)]
    StudyReport(StudyReportArgs),
}

#[derive(Args)]
struct InspectArgs {
    /// key = value file with model keys; training keys are accepted and ignored
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Number of scene classes
    #[arg(long, value_name = "K")]
    classes: Option<usize>,
    /// Square input side in pixels, a multiple of 32
    #[arg(long, value_name = "PX")]
    input_size: Option<usize>,
    /// Width multiplier for hidden layers, N or N/D
    #[arg(long, value_name = "RATIO")]
    channel_scale: Option<ChannelScale>,
    /// Drop the global and classification paths
    #[arg(long)]
    no_fusion: bool,
    /// Print the report as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root holding train/, val/ and test/
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// key = value file: a preset and/or training keys, plus optional model keys
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory for checkpoints, history.json and weights.unfw
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Restrict training to the classes listed one per line
    #[arg(long, value_name = "FILE")]
    classes_file: Option<PathBuf>,
    /// Square input side in pixels, a multiple of 32
    #[arg(long, value_name = "PX")]
    input_size: Option<usize>,
    /// Width multiplier for hidden layers, N or N/D
    #[arg(long, value_name = "RATIO")]
    channel_scale: Option<ChannelScale>,
    /// Start from these weights instead of a fresh initialization
    #[arg(long, value_name = "FILE", conflicts_with = "encoder")]
    init: Option<PathBuf>,
    /// Copy pretrained ResNet-34 encoder tensors from this weight file
    #[arg(long, value_name = "FILE")]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct ColorizeArgs {
    /// Weight file written by `train`
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// An image, or a directory of PNG/JPEG images
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Output directory, or a .png path when the input is one file
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
    /// Network input side; only needed for weights trained without fusion
    #[arg(long, value_name = "PX")]
    input_size: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Weight file written by `train`
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// Dataset root holding train/, val/ and test/
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Split to score
    #[arg(long, default_value = "test", value_name = "SPLIT")]
    split: Split,
    /// Where to write the JSON metric report
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Also write a one-row-per-model CSV (including --compare reports)
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Model name in the report [default: weight file stem]
    #[arg(long, value_name = "NAME")]
    name: Option<String>,
    /// Restrict to the classes listed one per line
    #[arg(long, value_name = "FILE")]
    classes_file: Option<PathBuf>,
    /// Images per inference batch
    #[arg(long, default_value_t = 8, value_name = "N")]
    batch: usize,
    /// Keep per-image metrics in the report
    #[arg(long)]
    per_image: bool,
    /// Earlier reports to rank alongside this one
    #[arg(long, value_name = "FILE", num_args = 1..)]
    compare: Vec<PathBuf>,
    /// Network input side; only needed for weights trained without fusion
    #[arg(long, value_name = "PX")]
    input_size: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the network, the batch and the sampled parameters
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum number of sampled scalars
    #[arg(long, default_value_t = 256, value_name = "N")]
    samples: usize,
    /// Batch size of the probe input
    #[arg(long, default_value_t = 4, value_name = "N")]
    batch: usize,
    /// Square input side in pixels, a multiple of 32
    #[arg(long, default_value_t = 64, value_name = "PX")]
    input_size: usize,
    /// Width multiplier for hidden layers, N or N/D
    #[arg(long, default_value = "1/8", value_name = "RATIO")]
    channel_scale: ChannelScale,
    /// Also write every sample as JSON
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct StudyServeArgs {
    /// Append-only event log; created if absent
    #[arg(long, value_name = "FILE")]
    log: PathBuf,
    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080", value_name = "ADDR")]
    addr: SocketAddr,
    /// Directory of static files for the browser client
    #[arg(long = "static", value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Create a study from a JSON spec before serving (repeatable)
    #[arg(long, value_name = "SPEC")]
    create: Vec<PathBuf>,
}

#[derive(Args)]
struct StudyReportArgs {
    /// Event log written by `study-serve`
    #[arg(long, value_name = "FILE")]
    log: PathBuf,
    /// Only this study [default: all]
    #[arg(long, value_name = "ID")]
    study: Option<String>,
    /// Also count judgments of unfinished sessions
    #[arg(long)]
    include_incomplete: bool,
    /// Print JSON instead of tables
    #[arg(long)]
    json: bool,
}

/// Why a command stopped; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<colorfuse::Error> for Failure {
    fn from(e: colorfuse::Error) -> Self {
        match e {
            colorfuse::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Invalid(_) | StudyError::NotFound(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = set_threads(cli.threads).and_then(|()| match cli.command {
        Command::Inspect(a) => commands::inspect(a),
        Command::Train(a) => commands::train(a),
        Command::Colorize(a) => commands::colorize(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::StudyServe(a) => commands::study_serve(a),
        Command::StudyReport(a) => commands::study_report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn set_threads(n: Option<usize>) -> Result<(), Failure> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}
