//! Planted-saliency toy task for the score-net.
//!
//! Each video has `K` salient frames whose tokens carry three times the
//! energy of the background frames. A per-frame distractor pattern, constant
//! over space and zero-mean across channels, hides that signal from a randomly
//! initialised score-net. Training pushes the smoothed ranking toward any
//! ordering that puts the salient frames first.

use crate::error::{Error, Result};
use crate::numerics::{RandomStream, Tensor};
use crate::ranking::{hard_rank, perturbed_inner_product, perturbed_rank_vjp, PerturbConfig};

use super::score_net::{score_net_backward, score_net_forward, ScoreNetParams};

#[derive(Clone, Debug)]
pub struct ToyVideo {
    /// Score-net input, `[T, M, N, C]`.
    pub tokens: Tensor,
    /// Salient frame indices, ascending.
    pub salient: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDatasetConfig {
    pub count: usize,
    pub frames: usize,
    pub salient: usize,
    pub grid: usize,
    pub channels: usize,
    /// Energy of a salient frame relative to a background frame.
    pub energy_ratio: f32,
    pub distractor: f32,
    pub seed: u64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        ToyDatasetConfig {
            count: 200,
            frames: 8,
            salient: 2,
            grid: 4,
            channels: 8,
            energy_ratio: 3.0,
            distractor: 1.5,
            seed: 0,
        }
    }
}

pub fn generate_dataset(cfg: &ToyDatasetConfig) -> Result<Vec<ToyVideo>> {
    let (t, k, g, c) = (cfg.frames, cfg.salient, cfg.grid, cfg.channels);
    if t == 0 || k == 0 || k >= t || g == 0 || c < 2 {
        return Err(Error::InvalidArgument(format!(
            "toy dataset needs 1 <= K < T, a non-empty grid and C >= 2 (got T={t}, K={k}, grid={g}, C={c})"
        )));
    }
    if !(cfg.energy_ratio > 0.0 && cfg.distractor >= 0.0) {
        return Err(Error::InvalidArgument("energy ratio must be positive and distractor non-negative".into()));
    }
    let gain = cfg.energy_ratio.sqrt();
    let mut rng = RandomStream::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mut salient = rng.permutation(t)[..k].to_vec();
        salient.sort_unstable();
        let mut tokens = Tensor::zeros(&[t, g, g, c]);
        for f in 0..t {
            let amp = if salient.contains(&f) { gain } else { 1.0 };
            let mut pattern = vec![0.0f32; c];
            rng.fill_normal(&mut pattern);
            let mean = pattern.iter().sum::<f32>() / c as f32;
            pattern.iter_mut().for_each(|v| *v = cfg.distractor * (*v - mean));
            for (i, v) in tokens.frame_mut(f).iter_mut().enumerate() {
                *v = amp * rng.normal().abs() + pattern[i % c];
            }
        }
        out.push(ToyVideo { tokens, salient });
    }
    Ok(out)
}

/// Average of all permutation matrices that rank the salient frames first:
/// `1/K` on (salient, slot < K) and `1/(T-K)` on (background, slot >= K).
pub fn target_matrix(frames: usize, salient: &[usize]) -> Tensor {
    let k = salient.len();
    let mut m = Tensor::zeros(&[frames, frames]);
    for i in 0..frames {
        let hit = salient.contains(&i);
        for j in 0..frames {
            let v = match (hit, j < k) {
                (true, true) => 1.0 / k as f32,
                (false, false) => 1.0 / (frames - k) as f32,
                _ => 0.0,
            };
            m.set(&[i, j], v);
        }
    }
    m
}

/// Fraction of the top-K scored frames that are salient, averaged over videos.
pub fn selection_accuracy(videos: &[ToyVideo], p: &ScoreNetParams) -> Result<f64> {
    if videos.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for v in videos {
        let order = hard_rank(&score_net_forward(&v.tokens, p)?);
        let k = v.salient.len();
        let hits = order.order()[..k].iter().filter(|i| v.salient.contains(i)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / videos.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct ToyTrainOutput {
    pub params: ScoreNetParams,
    /// `steps + 1` rows; row `i` describes the parameters after `i` updates.
    pub trace: Vec<TrainStep>,
}

fn video_config(cfg: &PerturbConfig, index: usize) -> PerturbConfig {
    cfg.with_seed(cfg.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Full-batch gradient descent on `L = -mean <G*, Y_sigma(s)>`.
///
/// Each video keeps the same noise seed at every step, so successive loss
/// values differ only through the parameters.
pub fn toy_train_scorenet(
    dataset: &[ToyVideo],
    init: &ScoreNetParams,
    steps: usize,
    learning_rate: f32,
    cfg: &PerturbConfig,
) -> Result<ToyTrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("toy training needs at least one video".into()));
    }
    let targets: Vec<Tensor> = dataset.iter().map(|v| target_matrix(v.tokens.dim(0), &v.salient)).collect();
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    let inv = 1.0 / dataset.len() as f32;
    for step in 0..=steps {
        let mut loss = 0.0;
        let mut hits = 0.0;
        let mut grad = ScoreNetParams::zeros(params.channels(), params.mid_channels(), params.hidden());
        for (i, (v, g)) in dataset.iter().zip(&targets).enumerate() {
            let scores = score_net_forward(&v.tokens, &params)?;
            let vc = video_config(cfg, i);
            loss -= perturbed_inner_product(&scores, &vc, g)?.value;
            let k = v.salient.len();
            let order = hard_rank(&scores);
            hits += order.order()[..k].iter().filter(|f| v.salient.contains(f)).count() as f64 / k as f64;
            if step < steps && learning_rate != 0.0 {
                let upstream = perturbed_rank_vjp(&scores, &vc, g)?.scale(-inv);
                grad.add_scaled(1.0, &score_net_backward(&v.tokens, &params, &upstream)?);
            }
        }
        let n = dataset.len() as f64;
        trace.push(TrainStep { step, loss: loss / n, accuracy: hits / n });
        if step < steps && learning_rate != 0.0 {
            params.add_scaled(-learning_rate, &grad);
        }
    }
    Ok(ToyTrainOutput { params, trace })
}

/// The reference recipe: dataset sizes, optimiser settings and initial
/// parameter scale used by the command-line tool and the acceptance run.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyRecipe {
    pub data: ToyDatasetConfig,
    pub held_out: usize,
    pub steps: usize,
    pub learning_rate: f32,
    pub mid: usize,
    pub hidden: usize,
    pub readout_scale: f32,
    pub perturb: PerturbConfig,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            data: ToyDatasetConfig::default(),
            held_out: 50,
            steps: 300,
            learning_rate: 0.5,
            mid: 4,
            hidden: 8,
            readout_scale: 0.05,
            perturb: PerturbConfig { sigma: 0.2, n_samples: 64, seed: 0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub train: ToyTrainOutput,
    pub held_out_initial: f64,
    pub held_out_final: f64,
}

pub fn run_recipe(r: &ToyRecipe) -> Result<ToyOutcome> {
    let mut all = generate_dataset(&ToyDatasetConfig { count: r.data.count + r.held_out, ..r.data.clone() })?;
    let held = all.split_off(r.data.count);
    let mut rng = RandomStream::new(r.data.seed ^ 0xA5A5_5A5A);
    let init = ScoreNetParams::init(r.data.channels, r.mid, r.hidden, r.readout_scale, &mut rng);
    let held_out_initial = selection_accuracy(&held, &init)?;
    let train = toy_train_scorenet(&all, &init, r.steps, r.learning_rate, &r.perturb)?;
    let held_out_final = selection_accuracy(&held, &train.params)?;
    Ok(ToyOutcome { train, held_out_initial, held_out_final })
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
