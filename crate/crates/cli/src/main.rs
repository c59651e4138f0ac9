//! `ropepp` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ropepp", version, about = "RoPE / RoPE++ scores, analysis and accounting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Element type for the benchmark cache: f32 or f64.
    #[arg(long, global = true)]
    pub float: Option<String>,
    /// Plain-text `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Randomized equivalence battery for the score forms and layouts.
    Verify(VerifyArgs),
    /// Characteristic curves as CSV.
    Curves(CurvesArgs),
    /// Positional coverage map as CSV.
    Coverage(CoverageArgs),
    /// One attention-layer forward pass; prints a JSON digest.
    Attend(AttendArgs),
    /// KV-cache, parameter and FLOP accounting as JSON.
    Budget(BudgetArgs),
    /// Single-thread decode micro-benchmark as JSON.
    Bench(BenchArgs),
    /// Generate a weights file (`<out>.json` + `<out>.bin`).
    Weights(WeightsArgs),
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Head dimensions to test.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Random cases per check and size.
    #[arg(long)]
    pub cases: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub max_dt: Option<f64>,
    /// Number of log-spaced grid points in [1, max_dt].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Comma list of real, imag, real_integral, imag_integral.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long)]
    pub train_len: Option<usize>,
    /// rope, or ropepp (eh and ec are accepted as aliases).
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Debug)]
pub struct AttendArgs {
    /// rope, eh or ec.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seq: Option<usize>,
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long)]
    pub noise_real: Option<f64>,
    #[arg(long)]
    pub noise_imag: Option<f64>,
    /// Weights sidecar written by `ropepp weights`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Zero the output-projection rows of imaginary heads.
    #[arg(long)]
    pub zero_imag_wo: bool,
    /// Include the full output and context tensors.
    #[arg(long)]
    pub full: bool,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Context lengths for the per-sequence rows.
    #[arg(long, value_delimiter = ',')]
    pub seqs: Option<Vec<usize>>,
    /// Bytes per cached element.
    #[arg(long)]
    pub dtype_bytes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub variant: Option<String>,
    /// Context lengths, ascending.
    #[arg(long, value_delimiter = ',')]
    pub seqs: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    #[arg(long)]
    pub variant: Option<String>,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ROPEPP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("ROPEPP_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            anyhow::bail!("ROPEPP_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    match &cli.command {
        Command::Verify(a) => commands::verify(g, &cfg, a),
        Command::Curves(a) => commands::curves(g, &cfg, a).map(|_| true),
        Command::Coverage(a) => commands::coverage(g, &cfg, a).map(|_| true),
        Command::Attend(a) => commands::attend(g, &cfg, a).map(|_| true),
        Command::Budget(a) => commands::budget(g, &cfg, a).map(|_| true),
        Command::Bench(a) => commands::bench(g, &cfg, a).map(|_| true),
        Command::Weights(a) => commands::weights(g, &cfg, a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
