//! Frame-saliency ranking.
//!
//! The hard ranking sorts frames by descending score. Its smoothed version
//! averages the hard ranking of `s + sigma * z` over Gaussian draws `z`; the
//! same draws give a Monte Carlo estimate of the vector-Jacobian product,
//! `E[<G, Y(s + sigma z)> z] / sigma`, which is what lets a score network
//! learn through the discrete sort.
//!
//! Noise is drawn in antithetic pairs: sample `2p` uses block `z_p` of the
//! seeded stream and sample `2p + 1` uses `-z_p`. Each block is centered
//! (its mean removed) before use. The ranking ignores a common shift of all
//! keys, so centering leaves every expectation unchanged, and both the forward
//! average and the gradient estimator stay unbiased; the gradient's variance
//! drops sharply once scores are a few `sigma` apart.

use crate::error::{shape_err, Error, Result};
use crate::numerics::{matmul, RandomStream, Tensor};

/// Real-valued saliency score per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyScores(Tensor);

impl SaliencyScores {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 1 || values.is_empty() {
            return shape_err("SaliencyScores", format!("need a non-empty vector, got {:?}", values.shape()));
        }
        if !values.is_finite() {
            return Err(Error::InvalidArgument("saliency scores must be finite".into()));
        }
        Ok(SaliencyScores(values))
    }

    pub fn from_slice(values: &[f32]) -> Result<Self> {
        Self::new(Tensor::vector(values))
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A ranking `order` (most salient first) and its permutation-matrix view,
/// whose column `j` is the one-hot indicator of `order[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortPermutation {
    order: Vec<usize>,
}

impl SortPermutation {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
        }
        Ok(SortPermutation { order })
    }

    pub fn identity(t: usize) -> Self {
        SortPermutation { order: (0..t).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn matrix(&self) -> Tensor {
        let t = self.order.len();
        let mut m = Tensor::zeros(&[t, t]);
        for (j, &i) in self.order.iter().enumerate() {
            m.data_mut()[i * t + j] = 1.0;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbConfig {
    pub sigma: f32,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { sigma: 0.05, n_samples: 500, seed: 0 }
    }
}

impl PerturbConfig {
    pub fn new(sigma: f32, n_samples: usize, seed: u64) -> Result<Self> {
        let cfg = PerturbConfig { sigma, n_samples, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        PerturbConfig { seed, ..self }
    }
}

/// Monte Carlo estimate of the smoothed sorting permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftRankMatrix {
    pub matrix: Tensor,
    pub sample_count: usize,
    pub sigma: f32,
    pub seed: u64,
}

impl SoftRankMatrix {
    pub fn len(&self) -> usize {
        self.matrix.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_sums(&self) -> Vec<f32> {
        let t = self.len();
        self.matrix.data().chunks(t).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f32> {
        let t = self.len();
        (0..t).map(|j| (0..t).map(|i| self.matrix.data()[i * t + j]).sum()).collect()
    }
}

/// Descending-score order; ties go to the smaller index.
fn sort_desc(keys: &[f64], order: &mut [usize]) {
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_unstable_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
}

pub fn hard_rank(s: &SaliencyScores) -> SortPermutation {
    let keys: Vec<f64> = s.values().iter().map(|&v| v as f64).collect();
    let mut order = vec![0; keys.len()];
    sort_desc(&keys, &mut order);
    SortPermutation { order }
}

/// Reorders frames: output frame `j` is input frame `order[j]`.
pub fn apply_sort(x: &Tensor, p: &SortPermutation) -> Result<Tensor> {
    if x.rank() == 0 || x.dim(0) != p.len() {
        return shape_err("apply_sort", format!("{} frames for a permutation of {}", x.shape().first().unwrap_or(&0), p.len()));
    }
    x.select(p.order())
}

/// Walks the `n` perturbed hard rankings. `visit(group, z, order)` receives the
/// antithetic group index, the sample's noise and the resulting order.
fn for_each_sample(s: &SaliencyScores, cfg: &PerturbConfig, mut visit: impl FnMut(usize, &[f32], &[usize])) {
    let t = s.len();
    let values = s.values();
    // Keys are offsets from the first score so that a common shift of the
    // scores leaves every key bit-identical.
    let base = values[0] as f64;
    let centered: Vec<f64> = values.iter().map(|&v| v as f64 - base).collect();
    let sigma = cfg.sigma as f64;
    let mut stream = RandomStream::new(cfg.seed);
    let mut z = vec![0.0f32; t];
    let mut keys = vec![0.0f64; t];
    let mut order = vec![0usize; t];
    for i in 0..cfg.n_samples {
        if i % 2 == 0 {
            stream.fill_normal(&mut z);
            let mean = z.iter().sum::<f32>() / t as f32;
            z.iter_mut().for_each(|v| *v -= mean);
        } else {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        for ((k, &c), &zi) in keys.iter_mut().zip(&centered).zip(&z) {
            *k = c + sigma * zi as f64;
        }
        sort_desc(&keys, &mut order);
        visit(i / 2, &z, &order);
    }
}

pub fn perturbed_rank(s: &SaliencyScores, cfg: &PerturbConfig) -> Result<SoftRankMatrix> {
    cfg.validate()?;
    let t = s.len();
    let mut counts = vec![0u64; t * t];
    for_each_sample(s, cfg, |_, _, order| {
        for (j, &i) in order.iter().enumerate() {
            counts[i * t + j] += 1;
        }
    });
    let n = cfg.n_samples as f64;
    let data = counts.iter().map(|&c| (c as f64 / n) as f32).collect();
    Ok(SoftRankMatrix { matrix: Tensor::new(&[t, t], data)?, sample_count: cfg.n_samples, sigma: cfg.sigma, seed: cfg.seed })
}

fn check_cotangent(s: &SaliencyScores, g: &Tensor) -> Result<()> {
    let t = s.len();
    if g.shape() != [t, t] {
        return shape_err("perturbed_rank_vjp", format!("cotangent {:?} for {t} frames", g.shape()));
    }
    if !g.is_finite() {
        return Err(Error::InvalidArgument("cotangent must be finite".into()));
    }
    Ok(())
}

fn inner(g: &[f32], t: usize, order: &[usize]) -> f64 {
    order.iter().enumerate().map(|(j, &i)| g[i * t + j] as f64).sum()
}

/// Estimate with its Monte Carlo standard error (per element).
#[derive(Clone, Debug)]
pub struct McEstimate<T> {
    pub value: T,
    pub std_error: T,
}

/// Accumulates per-group sums so the standard error respects the pairing.
struct GroupStats {
    dims: usize,
    current: usize,
    current_sum: Vec<f64>,
    current_size: usize,
    groups: Vec<(Vec<f64>, usize)>,
}

impl GroupStats {
    fn new(dims: usize) -> Self {
        GroupStats { dims, current: 0, current_sum: vec![0.0; dims], current_size: 0, groups: Vec::new() }
    }

    fn push(&mut self, group: usize, v: impl Iterator<Item = f64>) {
        if group != self.current && self.current_size > 0 {
            self.flush();
        }
        self.current = group;
        for (a, x) in self.current_sum.iter_mut().zip(v) {
            *a += x;
        }
        self.current_size += 1;
    }

    fn flush(&mut self) {
        let sum = std::mem::replace(&mut self.current_sum, vec![0.0; self.dims]);
        self.groups.push((sum, self.current_size));
        self.current_size = 0;
    }

    fn finish(mut self) -> (Vec<f64>, Vec<f64>) {
        if self.current_size > 0 {
            self.flush();
        }
        let n: usize = self.groups.iter().map(|g| g.1).sum();
        let mut mean = vec![0.0; self.dims];
        for (sum, _) in &self.groups {
            for (m, s) in mean.iter_mut().zip(sum) {
                *m += s;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut se = vec![0.0; self.dims];
        let k = self.groups.len();
        if k > 1 {
            for (sum, size) in &self.groups {
                for ((e, s), m) in se.iter_mut().zip(sum).zip(&mean) {
                    let d = s - *size as f64 * m;
                    *e += d * d;
                }
            }
            let scale = k as f64 / (k as f64 - 1.0);
            se.iter_mut().for_each(|e| *e = (*e * scale).sqrt() / n as f64);
        } else {
            se.iter_mut().for_each(|e| *e = f64::INFINITY);
        }
        (mean, se)
    }
}

/// `d<G, Y_sigma(s)>/ds` estimated with the same draws as [`perturbed_rank`],
/// together with its standard error.
pub fn perturbed_rank_vjp_with_error(
    s: &SaliencyScores,
    cfg: &PerturbConfig,
    g: &Tensor,
) -> Result<McEstimate<Tensor>> {
    cfg.validate()?;
    check_cotangent(s, g)?;
    let t = s.len();
    let sigma = cfg.sigma as f64;
    let gd = g.data();
    let mut stats = GroupStats::new(t);
    for_each_sample(s, cfg, |group, z, order| {
        let w = inner(gd, t, order) / sigma;
        stats.push(group, z.iter().map(|&zi| w * zi as f64));
    });
    let (mean, se) = stats.finish();
    Ok(McEstimate {
        value: Tensor::from_fn(&[t], |i| mean[i] as f32),
        std_error: Tensor::from_fn(&[t], |i| se[i] as f32),
    })
}

/// Vector-Jacobian product `G^T J_s Y_sigma`.
pub fn perturbed_rank_vjp(s: &SaliencyScores, cfg: &PerturbConfig, g: &Tensor) -> Result<Tensor> {
    Ok(perturbed_rank_vjp_with_error(s, cfg, g)?.value)
}

/// `<G, Y_sigma(s)>` with its standard error, without materializing the matrix.
pub fn perturbed_inner_product(s: &SaliencyScores, cfg: &PerturbConfig, g: &Tensor) -> Result<McEstimate<f64>> {
    cfg.validate()?;
    check_cotangent(s, g)?;
    let t = s.len();
    let gd = g.data();
    let mut stats = GroupStats::new(1);
    for_each_sample(s, cfg, |group, _, order| stats.push(group, std::iter::once(inner(gd, t, order))));
    let (mean, se) = stats.finish();
    Ok(McEstimate { value: mean[0], std_error: se[0] })
}

/// Frames split by a ranking, each part carrying the original time index of
/// every frame it holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKSplit {
    pub saliency: Tensor,
    pub non_saliency: Tensor,
    pub saliency_times: Vec<usize>,
    pub non_saliency_times: Vec<usize>,
}

pub fn topk_split(tokens: &Tensor, p: &SortPermutation, k: usize) -> Result<TopKSplit> {
    let t = p.len();
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!("saliency count {k} outside 1..={t}")));
    }
    if tokens.rank() == 0 || tokens.dim(0) != t {
        return shape_err("topk_split", format!("{:?} tokens for {t} ranked frames", tokens.shape()));
    }
    let (head, tail) = p.order().split_at(k);
    Ok(TopKSplit {
        saliency: tokens.select(head)?,
        non_saliency: tokens.select(tail)?,
        saliency_times: head.to_vec(),
        non_saliency_times: tail.to_vec(),
    })
}

/// `Y^T X` contracted over the frame axis.
pub fn soft_sort_apply(x: &Tensor, y: &SoftRankMatrix) -> Result<Tensor> {
    let t = y.len();
    if x.rank() == 0 || x.dim(0) != t {
        return shape_err("soft_sort_apply", format!("{:?} frames for a {t}x{t} soft ranking", x.shape()));
    }
    let flat = x.clone().reshape(&[t, x.frame_len()])?;
    let out = matmul(&y.matrix.transpose2()?, &flat)?;
    out.reshape(x.shape())
}
