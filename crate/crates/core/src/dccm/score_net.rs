use crate::error::{shape_err, Result};
use crate::numerics::{conv3d, frame_mean_pool, linear, relu, RandomStream, Tensor};
use crate::ranking::SaliencyScores;

/// 3x3x3 conv (`C -> Cmid`, no bias), per-frame average pool, then
/// `Cmid -> Ch -> 1` with a rectifier in between.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetParams {
    /// `[3, 3, 3, C, Cmid]`
    pub conv_kernel: Tensor,
    /// `[Cmid, Ch]`
    pub linear1_weight: Tensor,
    /// `[Ch]`
    pub linear1_bias: Tensor,
    /// `[Ch, 1]`
    pub linear2_weight: Tensor,
    /// `[1]`
    pub linear2_bias: Tensor,
}

impl ScoreNetParams {
    pub fn zeros(channels: usize, mid: usize, hidden: usize) -> Self {
        ScoreNetParams {
            conv_kernel: Tensor::zeros(&[3, 3, 3, channels, mid]),
            linear1_weight: Tensor::zeros(&[mid, hidden]),
            linear1_bias: Tensor::zeros(&[hidden]),
            linear2_weight: Tensor::zeros(&[hidden, 1]),
            linear2_bias: Tensor::zeros(&[1]),
        }
    }

    /// Fan-in scaled Gaussian weights and zero biases. `readout_scale`
    /// multiplies the last layer; small values start every frame near the
    /// same score, where the perturbed ranking still passes gradient.
    pub fn init(channels: usize, mid: usize, hidden: usize, readout_scale: f32, rng: &mut RandomStream) -> Self {
        let mut p = Self::zeros(channels, mid, hidden);
        let std = |fan_in: usize| 1.0 / (fan_in as f32).sqrt();
        p.conv_kernel = rng.gaussian(p.conv_kernel.shape()).scale(std(27 * channels));
        p.linear1_weight = rng.gaussian(p.linear1_weight.shape()).scale(std(mid));
        p.linear2_weight = rng.gaussian(p.linear2_weight.shape()).scale(readout_scale * std(hidden));
        p
    }

    pub fn channels(&self) -> usize {
        self.conv_kernel.dim(3)
    }

    pub fn mid_channels(&self) -> usize {
        self.conv_kernel.dim(4)
    }

    pub fn hidden(&self) -> usize {
        self.linear1_weight.dim(1)
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv_kernel", &self.conv_kernel),
            ("linear1_weight", &self.linear1_weight),
            ("linear1_bias", &self.linear1_bias),
            ("linear2_weight", &self.linear2_weight),
            ("linear2_bias", &self.linear2_bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("conv_kernel", &mut self.conv_kernel),
            ("linear1_weight", &mut self.linear1_weight),
            ("linear1_bias", &mut self.linear1_bias),
            ("linear2_weight", &mut self.linear2_weight),
            ("linear2_bias", &mut self.linear2_bias),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f32, other: &ScoreNetParams) {
        for ((_, dst), (_, src)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += alpha * s;
            }
        }
    }

    fn check_input(&self, tokens: &Tensor) -> Result<()> {
        if tokens.rank() != 4 || tokens.dim(3) != self.channels() {
            return shape_err(
                "score_net",
                format!("tokens {:?} for a score-net over {} channels", tokens.shape(), self.channels()),
            );
        }
        Ok(())
    }
}

struct Activations {
    pooled: Tensor,
    pre: Tensor,
    hidden: Tensor,
    scores: Tensor,
}

fn forward_with_activations(tokens: &Tensor, p: &ScoreNetParams) -> Result<Activations> {
    p.check_input(tokens)?;
    let conv = conv3d(tokens, &p.conv_kernel)?;
    let pooled = frame_mean_pool(&conv)?;
    let pre = linear(&pooled, &p.linear1_weight, Some(&p.linear1_bias))?;
    let hidden = relu(&pre);
    let out = linear(&hidden, &p.linear2_weight, Some(&p.linear2_bias))?;
    let t = tokens.dim(0);
    let scores = out.reshape(&[t])?;
    Ok(Activations { pooled, pre, hidden, scores })
}

/// One saliency score per frame of `tokens [T, M, N, C]`.
pub fn score_net_forward(tokens: &Tensor, p: &ScoreNetParams) -> Result<SaliencyScores> {
    SaliencyScores::new(forward_with_activations(tokens, p)?.scores)
}

/// Reverse-mode gradient of `<upstream, scores>` with respect to every
/// parameter tensor.
pub fn score_net_backward(tokens: &Tensor, p: &ScoreNetParams, upstream: &Tensor) -> Result<ScoreNetParams> {
    let act = forward_with_activations(tokens, p)?;
    let t = tokens.dim(0);
    if upstream.shape() != [t] {
        return shape_err("score_net_backward", format!("upstream {:?} for {t} frames", upstream.shape()));
    }
    let (m, n, c) = (tokens.dim(1), tokens.dim(2), tokens.dim(3));
    let (mid, hid) = (p.mid_channels(), p.hidden());
    let ds = upstream.data();
    let mut g = ScoreNetParams::zeros(c, mid, hid);

    // scores = hidden @ w2 + b2
    g.linear2_bias.data_mut()[0] = ds.iter().sum();
    let mut d_pre = vec![0.0f32; t * hid];
    for ti in 0..t {
        for j in 0..hid {
            g.linear2_weight.data_mut()[j] += act.hidden.data()[ti * hid + j] * ds[ti];
            // rectifier gate
            if act.pre.data()[ti * hid + j] > 0.0 {
                d_pre[ti * hid + j] = ds[ti] * p.linear2_weight.data()[j];
            }
        }
    }

    // pre = pooled @ w1 + b1
    let mut d_pooled = vec![0.0f32; t * mid];
    for ti in 0..t {
        for j in 0..hid {
            let dp = d_pre[ti * hid + j];
            g.linear1_bias.data_mut()[j] += dp;
            for i in 0..mid {
                g.linear1_weight.data_mut()[i * hid + j] += act.pooled.data()[ti * mid + i] * dp;
                d_pooled[ti * mid + i] += p.linear1_weight.data()[i * hid + j] * dp;
            }
        }
    }

    // pooled[t, o] = mean_{m,n} conv[t, m, n, o]; conv is a same-padded
    // cross-correlation, so each kernel tap sees the input shifted by its offset.
    let inv_area = 1.0 / (m * n) as f32;
    let x = tokens.data();
    let gk = g.conv_kernel.data_mut();
    let mut window = vec![0.0f32; c];
    for ti in 0..t {
        let d_conv = &d_pooled[ti * mid..(ti + 1) * mid];
        for a in 0..3 {
            let Some(st) = (ti + a).checked_sub(1).filter(|&v| v < t) else { continue };
            for b in 0..3 {
                for d in 0..3 {
                    // Sum of the input over every output position this tap reads.
                    window.iter_mut().for_each(|w| *w = 0.0);
                    for mi in 0..m {
                        let Some(sm) = (mi + b).checked_sub(1).filter(|&v| v < m) else { continue };
                        for ni in 0..n {
                            let Some(sn) = (ni + d).checked_sub(1).filter(|&v| v < n) else { continue };
                            let src = &x[((st * m + sm) * n + sn) * c..][..c];
                            for (w, &v) in window.iter_mut().zip(src) {
                                *w += v;
                            }
                        }
                    }
                    let tap = &mut gk[((a * 3 + b) * 3 + d) * c * mid..][..c * mid];
                    for (ci, &w) in window.iter().enumerate() {
                        for (o, &dc) in d_conv.iter().enumerate() {
                            tap[ci * mid + o] += w * dc * inv_area;
                        }
                    }
                }
            }
        }
    }
    Ok(g)
}
