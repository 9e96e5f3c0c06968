use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use drca_core::dccm::toy::{run_recipe, ToyDatasetConfig, ToyRecipe};
use drca_core::dccm::Mode;
use drca_core::flops::{count_baseline_flops, count_flops, CostConvention, FlopsReport};
use drca_core::gradcheck::{closed_form_check, finite_difference_check, FiniteDifferenceSettings};
use drca_core::model::{baseline_forward, forward as model_forward, load_params, random_video, save_params, save_tensors, DrcaParams, HeadMode};
use drca_core::numerics::{read_tnsr, write_tnsr};
use drca_core::ranking::{hard_rank, perturbed_rank, PerturbConfig, SaliencyScores};

use crate::config::{Pipeline, RunConfig};
use crate::ConfigArgs;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_LOW_POWER: u8 = 3;

/// Smallest Monte Carlo sample count the gradient checks accept.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CmdResult = Result<u8, Failure>;

pub fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INPUT, message: message.into() }
}

fn core_err(e: drca_core::Error) -> Failure {
    input_error(e.to_string())
}

fn env_seed() -> Result<u64, Failure> {
    match std::env::var("DRCA_SEED") {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| input_error(format!("DRCA_SEED must be an unsigned integer, got `{v}`"))),
    }
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig, Failure> {
    RunConfig::load(a.config.as_deref(), &a.overrides, env_seed()?).map_err(input_error)
}

fn print_echo(c: &RunConfig) {
    for line in c.echo().lines() {
        println!("# {line}");
    }
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>, sep: &str) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

pub fn rank(path: &Path, sigma: f32, n: usize, seed: u64) -> CmdResult {
    let t = read_tnsr(path).map_err(core_err)?;
    if t.rank() != 1 {
        return Err(input_error(format!("{}: expected a rank-1 score tensor, got shape {:?}", path.display(), t.shape())));
    }
    let scores = SaliencyScores::new(t).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let cfg = PerturbConfig::new(sigma, n, seed).map_err(core_err)?;
    println!("order: {}", join(hard_rank(&scores).order(), " "));
    let soft = perturbed_rank(&scores, &cfg).map_err(core_err)?;
    println!("soft rank (sigma = {sigma}, n = {n}, seed = {seed}):");
    let len = soft.len();
    for i in 0..len {
        println!("  {}", join((0..len).map(|j| format!("{:.4}", soft.matrix.at(&[i, j]))), " "));
    }
    println!("row sums: {}", join(soft.row_sums().iter().map(|v| format!("{v:.3}")), " "));
    println!("col sums: {}", join(soft.col_sums().iter().map(|v| format!("{v:.3}")), " "));
    Ok(EXIT_OK)
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Frame count of the finite-difference check (the closed-form check is always two-frame).
    #[arg(long = "t", default_value_t = 2)]
    frames: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f32,
    /// Samples per gradient estimate.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Closed-form trials.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Finite-difference trials (random score vectors).
    #[arg(long, default_value_t = 5)]
    fd_trials: usize,
    /// Samples per finite-difference evaluation point.
    #[arg(long, default_value_t = 1_000_000)]
    fd_samples: usize,
    #[arg(long, default_value_t = 0.02)]
    step: f32,
}

pub fn grad_check(a: &GradCheckArgs) -> CmdResult {
    println!(
        "grad-check: sigma = {}, n = {}, seed = {}, closed-form trials = {}, finite-difference T = {}, trials = {}, samples = {}, step = {}",
        a.sigma, a.n, a.seed, a.trials, a.frames, a.fd_trials, a.fd_samples, a.step
    );
    if a.n < MIN_SAMPLES || a.fd_samples < MIN_SAMPLES {
        println!(
            "summary: insufficient statistical power (n = {}, fd samples = {}; at least {MIN_SAMPLES} needed); nothing checked",
            a.n, a.fd_samples
        );
        return Ok(EXIT_LOW_POWER);
    }
    if a.frames < 2 {
        return Err(input_error("--t must be at least 2"));
    }
    let closed = closed_form_check(a.sigma, a.n, a.seed, a.trials).map_err(core_err)?;
    for (i, t) in closed.iter().enumerate() {
        println!(
            "closed-form {i}: a = {:.5} b = {:.5} estimate = {:.5} expected = {:.5} rel_err = {:.4} {}",
            t.a,
            t.b,
            t.estimate,
            t.expected,
            t.relative_error,
            if t.passed { "PASS" } else { "FAIL" }
        );
    }
    let fd = finite_difference_check(&FiniteDifferenceSettings {
        frames: a.frames,
        sigma: a.sigma,
        vjp_samples: a.n,
        fd_samples: a.fd_samples,
        step: a.step,
        trials: a.fd_trials,
        seed: a.seed,
        ..Default::default()
    })
    .map_err(core_err)?;
    for (i, t) in fd.iter().enumerate() {
        println!(
            "finite-difference {i}: vjp = [{}] fd = [{}] worst |diff|/se = {:.2} {}",
            join(t.vjp.iter().map(|v| format!("{v:.4}")), ", "),
            join(t.finite_difference.iter().map(|v| format!("{v:.4}")), ", "),
            t.worst_z(),
            if t.passed { "PASS" } else { "FAIL" }
        );
    }
    let cp = closed.iter().filter(|t| t.passed).count();
    let fp = fd.iter().filter(|t| t.passed).count();
    let ok = cp == closed.len() && fp == fd.len();
    println!(
        "summary: closed-form {cp}/{} passed, finite-difference {fp}/{} passed: {}",
        closed.len(),
        fd.len(),
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn forward(a: &ConfigArgs, video_path: &Path, out: &Path, mode: Option<&str>) -> CmdResult {
    let mut c = load_config(a)?;
    match mode {
        None => {}
        Some("infer") => c.mode = Mode::Infer,
        Some("train") => c.mode = Mode::Train,
        Some(other) => return Err(input_error(format!("--mode must be infer or train, got `{other}`"))),
    }
    print_echo(&c);
    let m = &c.model;
    let video = read_tnsr(video_path).map_err(core_err)?;
    let want = [m.frames, m.height, m.width, 3];
    if video.shape() != want {
        return Err(input_error(format!(
            "{}: video has shape {:?}, config expects {want:?}",
            video_path.display(),
            video.shape()
        )));
    }
    let params = match &c.params {
        Some(dir) => load_params(dir, m).map_err(core_err)?,
        None => DrcaParams::init(m, c.seed).map_err(core_err)?,
    };
    let result = match c.pipeline {
        Pipeline::Drca => model_forward(&video, &params, m, c.mode, &c.perturb),
        Pipeline::Baseline => baseline_forward(&video, &params, m),
    }
    .map_err(core_err)?;
    write_tnsr(out, &result.output).map_err(core_err)?;
    println!("selected: {}", join(&result.selected, " "));
    println!("scores: {}", join(result.scores.values().iter().map(|v| format!("{v:.6}")), " "));
    println!("output shape: {:?}", result.output.shape());
    if let HeadMode::Retrieval { .. } = m.head {
        println!("embedding norm: {:.6}", result.output.norm());
    }
    if let Some(soft) = &result.soft_rank {
        println!("soft rank samples: {}", soft.sample_count);
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn report_for(c: &RunConfig) -> Result<FlopsReport, Failure> {
    match c.pipeline {
        Pipeline::Drca => count_flops(&c.model),
        Pipeline::Baseline => count_baseline_flops(&c.model),
    }
    .map_err(core_err)
}

pub fn flops(configs: &[PathBuf], overrides: &[String], table: bool) -> CmdResult {
    if configs.len() > 2 {
        return Err(input_error("flops takes at most two config files"));
    }
    let seed = env_seed()?;
    let mut loaded = Vec::new();
    if configs.is_empty() {
        loaded.push(RunConfig::load(None, overrides, seed).map_err(input_error)?);
    }
    for p in configs {
        loaded.push(RunConfig::load(Some(p), overrides, seed).map_err(input_error)?);
    }
    println!("# convention: {}", CostConvention::STANDARD);
    let mut totals = Vec::new();
    for (i, c) in loaded.iter().enumerate() {
        if loaded.len() > 1 {
            println!("## config {}", i + 1);
        }
        print_echo(c);
        let r = report_for(c)?;
        print!("{}", if table { r.to_table() } else { r.to_tsv() });
        println!("# gflops = {}", r.gflops());
        totals.push(r.total());
    }
    if totals.len() == 2 {
        println!("ratio = {:.4}", totals[0] as f64 / totals[1] as f64);
    }
    Ok(EXIT_OK)
}

#[derive(Args, Debug)]
pub struct ToyTrainArgs {
    #[arg(long, default_value_t = 200)]
    videos: usize,
    #[arg(long, default_value_t = 50)]
    held_out: usize,
    #[arg(long = "t", default_value_t = 8)]
    frames: usize,
    #[arg(long = "k", default_value_t = 2)]
    salient: usize,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f32,
    /// Perturbation samples per video per step.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Energy of salient frames relative to background frames.
    #[arg(long, default_value_t = 3.0)]
    signal_ratio: f32,
    /// CSV trace path (step, loss, accuracy).
    #[arg(long, default_value = "toy_trace.csv")]
    trace: PathBuf,
    /// Directory for the trained score-net parameters.
    #[arg(long, default_value = "toy_params")]
    out_dir: PathBuf,
}

pub fn toy_train(a: &ToyTrainArgs) -> CmdResult {
    let defaults = ToyRecipe::default();
    let recipe = ToyRecipe {
        data: ToyDatasetConfig {
            count: a.videos,
            frames: a.frames,
            salient: a.salient,
            energy_ratio: a.signal_ratio,
            seed: a.seed,
            ..defaults.data.clone()
        },
        held_out: a.held_out,
        steps: a.steps,
        learning_rate: a.lr,
        perturb: PerturbConfig::new(a.sigma, a.n, a.seed).map_err(core_err)?,
        ..defaults
    };
    println!(
        "toy-train: videos = {}, held_out = {}, T = {}, K = {}, steps = {}, lr = {}, seed = {}, sigma = {}, n = {}, signal_ratio = {}",
        a.videos, a.held_out, a.frames, a.salient, a.steps, a.lr, a.seed, a.sigma, a.n, a.signal_ratio
    );
    let outcome = run_recipe(&recipe).map_err(core_err)?;
    let mut csv = String::from("step,loss,accuracy\n");
    for r in &outcome.train.trace {
        writeln!(csv, "{},{:.6},{:.4}", r.step, r.loss, r.accuracy).unwrap();
    }
    fs::write(&a.trace, csv).map_err(|e| input_error(format!("{}: {e}", a.trace.display())))?;
    let named: Vec<(String, _)> =
        outcome.train.params.named_tensors().into_iter().map(|(n, t)| (format!("score_net.{n}"), t)).collect();
    save_tensors(&a.out_dir, &named).map_err(core_err)?;
    let last = outcome.train.trace.last().expect("trace has the initial row");
    println!("initial held-out accuracy: {:.3}", outcome.held_out_initial);
    println!("final train loss: {:.6}", last.loss);
    println!("final train accuracy: {:.3}", last.accuracy);
    println!("final held-out accuracy: {:.3}", outcome.held_out_final);
    println!("wrote {} and {}", a.trace.display(), a.out_dir.display());
    Ok(EXIT_OK)
}

pub fn gen_video(a: &ConfigArgs, seed: u64, out: &Path) -> CmdResult {
    let c = load_config(a)?;
    let v = random_video(&c.model, seed);
    write_tnsr(out, &v).map_err(core_err)?;
    println!("wrote {} with shape {:?}", out.display(), v.shape());
    Ok(EXIT_OK)
}

pub fn init_params(a: &ConfigArgs, dir: &Path) -> CmdResult {
    let c = load_config(a)?;
    print_echo(&c);
    let p = DrcaParams::init(&c.model, c.seed).map_err(core_err)?;
    save_params(dir, &p).map_err(core_err)?;
    println!("wrote {} tensors ({} values) to {}", p.named_tensors().len(), p.param_count(), dir.display());
    Ok(EXIT_OK)
}
