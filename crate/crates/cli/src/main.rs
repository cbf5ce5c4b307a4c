mod commands;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::report::RunReport;

#[derive(Parser, Debug)]
#[command(name = "effcompute", version, about = "Fit augmented scaling laws and estimate algorithmic progress")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "EFFCOMPUTE_THREADS")]
    threads: Option<usize>,
    /// Render aligned tables instead of JSON.
    #[arg(long, global = true)]
    text: bool,
    /// Record wall-clock time in the report (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a CSV and report per-row diagnostics.
    Validate(ValidateArgs),
    /// Fit one specification, optionally with a bootstrap.
    Fit(FitArgs),
    /// Cross-validate a grid of specifications.
    Loocv(LoocvArgs),
    /// Shapley attribution, compute-equivalent gains and period comparisons.
    Analyze(AnalyzeArgs),
    /// Write a synthetic CSV drawn from a specification.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training-data definition.
    #[arg(long, value_enum, default_value_t = DataModeArg::DatasetSize)]
    pub data_mode: DataModeArg,
    /// Count a missing epoch figure as one epoch.
    #[arg(long)]
    pub impute_epochs: bool,
    /// Keep at most this many lowest-loss records per paper.
    #[arg(long)]
    pub cap_per_paper: Option<usize>,
    /// Keep rows carrying exclusion flags.
    #[arg(long)]
    pub keep_excluded: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataModeArg {
    DatasetSize,
    TokensSeen,
    TokensSeenDiminishing,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub keep_excluded: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub input: PathBuf,
    /// Specification id: 1-20, irreducible, transformer_ceg or cutoff@YEAR.
    #[arg(long, default_value = "7")]
    pub model: String,
    /// L1 penalty weight.
    #[arg(long, default_value_t = 0.0025)]
    pub delta: f64,
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clustered likelihood fit and paper-level bootstrap.
    #[arg(long)]
    pub cluster: bool,
    /// Random starts for the full-data fit.
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    /// Budget for optimal-scaling doubling times when no closed form exists.
    #[arg(long, default_value_t = 1e21)]
    pub budget: f64,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct LoocvArgs {
    pub input: PathBuf,
    /// `default` for every model and delta, or a comma list of MODEL[:DELTA]
    /// (a bare MODEL takes every delta on the grid).
    #[arg(long, default_value = "default")]
    pub grid: String,
    /// Contiguous folds instead of leave-one-out.
    #[arg(long)]
    pub kfold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Evaluation records; needed for everything except --ceg-chinchilla.
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "7")]
    pub model: String,
    #[arg(long, default_value_t = 0.0025)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attribute progress between two records: old=NAME new=NAME.
    #[arg(long, num_args = 2, value_names = ["old=NAME", "new=NAME"])]
    pub shapley: Option<Vec<String>>,
    /// Measure Shapley values on loss rather than perplexity.
    #[arg(long)]
    pub shapley_loss: bool,
    /// Compute-equivalent gain of the transformer.
    #[arg(long)]
    pub ceg_transformer: bool,
    /// Budget for --ceg-transformer, in FLOP.
    #[arg(long, default_value_t = 1e21)]
    pub budget: f64,
    /// Kaplan to Chinchilla compute-equivalent gain at this budget (FLOP).
    #[arg(long)]
    pub ceg_chinchilla: Option<f64>,
    /// TOML file replacing the shipped scaling-law constants.
    #[arg(long)]
    pub laws: Option<PathBuf>,
    /// Match optimal losses directly instead of scoring the allocation.
    #[arg(long)]
    pub loss_matched: bool,
    /// Doubling times before and after this year.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Bootstrap replicates for --cutoff.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Compute multiplier from this many years of progress.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Doubling time for --gain instead of the fitted one.
    #[arg(long)]
    pub t_c_months: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "7")]
    pub model: String,
    /// JSON object of parameter values; defaults to the reference estimates
    /// for the main specification.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub papers: Option<usize>,
    /// Within-paper noise correlation.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
}

/// Why a command stopped. The report, when present, is still written.
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub report: Option<Box<RunReport>>,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
            report: None,
        }
    }

    pub fn fit(message: impl Into<String>) -> Failure {
        Failure {
            code: 3,
            message: message.into(),
            report: None,
        }
    }

    pub fn analysis(message: impl Into<String>) -> Failure {
        Failure {
            code: 4,
            message: message.into(),
            report: None,
        }
    }

    pub fn with_report(mut self, mut report: RunReport) -> Failure {
        report.error = Some(self.message.clone());
        self.report = Some(Box::new(report));
        self
    }
}

/// Either a report or CSV text from `synth`.
pub enum Output {
    Report(Box<RunReport>),
    Csv(Vec<u8>),
}

fn emit(cli: &Cli, bytes: &[u8]) -> std::io::Result<()> {
    match &cli.output {
        Some(path) => std::fs::write(path, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}

fn render(cli: &Cli, report: &mut RunReport, started: Instant) -> Vec<u8> {
    if cli.timing {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    if cli.text {
        report.to_text().into_bytes()
    } else {
        report.to_json().into_bytes()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let started = Instant::now();
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Loocv(a) => commands::loocv(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Synth(a) => commands::synth(a),
    };
    let (bytes, code) = match result {
        Ok(Output::Report(mut r)) => (Some(render(&cli, &mut r, started)), 0),
        Ok(Output::Csv(csv)) => (Some(csv), 0),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.report.map(|mut r| render(&cli, &mut r, started)), f.code)
        }
    };
    if let Some(bytes) = bytes {
        if let Err(e) = emit(&cli, &bytes) {
            eprintln!("error: cannot write output: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
