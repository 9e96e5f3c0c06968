mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Differentiable frame compression for video transformers: ranking, forward
/// runs, cost reports and checks.
#[derive(Parser, Debug)]
#[command(name = "drca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set saliency_count=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hard and smoothed ranking of a rank-1 score tensor.
    Rank {
        scores: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        sigma: f32,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Two-frame closed-form and finite-difference checks of the ranking gradient.
    GradCheck(commands::GradCheckArgs),
    /// Run the network on a video tensor and write its output.
    Forward {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// infer or train; overrides the config's `mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Analytic FLOPs report for one config, or a comparison of two.
    Flops {
        configs: Vec<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Human-readable table instead of tab-separated lines.
        #[arg(long)]
        table: bool,
    },
    /// Train the score-net on planted-saliency toy videos.
    ToyTrain(commands::ToyTrainArgs),
    /// Fast contract and oracle suites for every module.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_softmax: bool,
    },
    /// Write a seeded Gaussian video matching a config.
    GenVideo {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write seeded initial parameters for a config.
    InitParams {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rank { scores, sigma, n, seed } => commands::rank(&scores, sigma, n, seed),
        Command::GradCheck(a) => commands::grad_check(&a),
        Command::Forward { cfg, video, out, mode } => commands::forward(&cfg, &video, &out, mode.as_deref()),
        Command::Flops { configs, overrides, table } => commands::flops(&configs, &overrides, table),
        Command::ToyTrain(a) => commands::toy_train(&a),
        Command::Selftest { corrupt_softmax } => selftest::run(corrupt_softmax),
        Command::GenVideo { cfg, seed, out } => commands::gen_video(&cfg, seed, &out),
        Command::InitParams { cfg, out_dir } => commands::init_params(&cfg, &out_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("drca: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
