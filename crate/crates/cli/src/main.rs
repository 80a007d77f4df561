//! `spkm`: cost tables, `.spkm` packing, toy training, encoding and analysis.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(spkm::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(spkm::Error::Numerical(_)) => 3,
            CliError::Data(_) | CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<spkm::Error> for CliError {
    fn from(e: spkm::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "spkm", version, about = "Binary event-matrix coding and toy autoencoder tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bit cost of every storage format, nominal and exact.
    Cost(CostArgs),
    /// Best-format table over every event count for one shape.
    Sweep(SweepArgs),
    /// Pack text event matrices into a `.spkm` stream.
    Pack(PackArgs),
    /// Unpack a `.spkm` stream into text event matrices.
    Unpack(UnpackArgs),
    /// Render a random toy-piano score to WAV plus its onset grid.
    Synth(SynthArgs),
    /// Train a toy autoencoder on synthetic clips.
    Train(TrainArgs),
    /// Encode WAV files into a `.spkm` stream with a trained model.
    Encode(EncodeArgs),
    /// Decode a `.spkm` stream back to audio with a trained model.
    Decode(DecodeArgs),
    /// Unit/note cross-correlation and peak prominence tables.
    Analyze(AnalyzeArgs),
    /// Largest prompt whose reconstruction meets an SI-SNR floor.
    MuSelect(MuSelectArgs),
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long, requires_all = ["t", "s"], conflicts_with = "matrix")]
    pub n: Option<u64>,
    #[arg(long)]
    pub t: Option<u64>,
    #[arg(long)]
    pub s: Option<u64>,
    /// Text event matrix (`N T` header, one `i t` line per event).
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 80)]
    pub n: u64,
    #[arg(long, default_value_t = 1024)]
    pub t: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Draw the nominal-cost curves dashed on the SVG.
    #[arg(long)]
    pub nominal_overlay: bool,
}

#[derive(Args, Debug)]
pub struct PackArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// `auto`, `dense`, `coo`, `time` or `units`.
    #[arg(long, default_value = "auto")]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct UnpackArgs {
    pub input: PathBuf,
    /// Directory receiving `sample_0000.txt`, ...
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of notes.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Number of frames.
    #[arg(long, default_value_t = 256)]
    pub t: usize,
    /// Onset probability per note and frame.
    #[arg(long, default_value_t = 0.015)]
    pub rate: f64,
    /// Output prefix: writes `<out>.wav` and `<out>.grid.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `free`, `sparse` or `mu`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set")]
    pub set: Vec<String>,
    /// Total steps, split 40/30/30 over the three phases.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clips: Option<usize>,
    /// Output prefix: writes `<out>.spkn` and `<out>.metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Print a metrics line to stderr every this many steps (0 = never).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mu: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "auto")]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mu: Option<usize>,
    /// Output WAV; multi-sample streams get `_0000`, `_0001`, ... suffixes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mu: Option<usize>,
    /// Audio clips, paired in order with `--grid`.
    #[arg(long = "wav", required = true)]
    pub wavs: Vec<PathBuf>,
    /// Onset grids in text form.
    #[arg(long = "grid", required = true)]
    pub grids: Vec<PathBuf>,
    #[arg(long, default_value_t = spkm::analysis::DEFAULT_LAG_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = spkm::analysis::DEFAULT_PEAK_HALF_WINDOW)]
    pub peak: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Receives `correlation.csv`, `prominence.csv` and `selectivity.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct MuSelectArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 9.0, allow_negative_numbers = true)]
    pub min_sisnr: f64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Cost(a) => commands::cost(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Pack(a) => commands::pack(a),
        Command::Unpack(a) => commands::unpack(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::MuSelect(a) => commands::mu_select(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
