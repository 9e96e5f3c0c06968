//! Resolution-align transformer layer.
//!
//! A layer runs temporal attention, spatial attention and a feed-forward
//! block, each pre-normalised and residual. Spatial attention works inside a
//! frame at that frame's own resolution. Temporal attention first brings the
//! saliency frames down to the non-saliency grid, attends over time at every
//! low-resolution location, then writes the result back with nearest
//! upsampling for the saliency frames.

use crate::dccm::MultiResSequence;
use crate::error::{shape_err, Result};
use crate::numerics::{
    avgpool_downsample, gelu, layer_norm, linear, multi_head_attention, nearest_upsample, RandomStream, Tensor,
};

pub const LN_EPS: f32 = 1e-5;

/// Pre-norm multi-head attention sublayer: `[C]` gain and shift, `[C, C]`
/// projections without bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub norm_gain: Tensor,
    pub norm_shift: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

impl AttentionParams {
    pub fn zeros(c: usize) -> Self {
        AttentionParams {
            norm_gain: Tensor::full(&[c], 1.0),
            norm_shift: Tensor::zeros(&[c]),
            w_q: Tensor::zeros(&[c, c]),
            w_k: Tensor::zeros(&[c, c]),
            w_v: Tensor::zeros(&[c, c]),
            w_o: Tensor::zeros(&[c, c]),
        }
    }

    pub fn init(c: usize, rng: &mut RandomStream) -> Self {
        let s = 1.0 / (c as f32).sqrt();
        AttentionParams {
            norm_gain: Tensor::full(&[c], 1.0),
            norm_shift: Tensor::zeros(&[c]),
            w_q: rng.gaussian(&[c, c]).scale(s),
            w_k: rng.gaussian(&[c, c]).scale(s),
            w_v: rng.gaussian(&[c, c]).scale(s),
            w_o: rng.gaussian(&[c, c]).scale(s),
        }
    }

    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("norm_gain", &self.norm_gain),
            ("norm_shift", &self.norm_shift),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("norm_gain", &mut self.norm_gain),
            ("norm_shift", &mut self.norm_shift),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
        ]
    }

    fn check(&self, c: usize, what: &'static str) -> Result<()> {
        let ok = self.norm_gain.shape() == [c]
            && self.norm_shift.shape() == [c]
            && [&self.w_q, &self.w_k, &self.w_v, &self.w_o].iter().all(|w| w.shape() == [c, c]);
        if ok {
            Ok(())
        } else {
            shape_err(what, format!("parameters do not match {c} channels"))
        }
    }
}

/// Pre-norm `C -> 4C -> C` block with a GELU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub norm_gain: Tensor,
    pub norm_shift: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FeedForwardParams {
    pub fn zeros(c: usize) -> Self {
        FeedForwardParams {
            norm_gain: Tensor::full(&[c], 1.0),
            norm_shift: Tensor::zeros(&[c]),
            w1: Tensor::zeros(&[c, 4 * c]),
            b1: Tensor::zeros(&[4 * c]),
            w2: Tensor::zeros(&[4 * c, c]),
            b2: Tensor::zeros(&[c]),
        }
    }

    pub fn init(c: usize, rng: &mut RandomStream) -> Self {
        FeedForwardParams {
            norm_gain: Tensor::full(&[c], 1.0),
            norm_shift: Tensor::zeros(&[c]),
            w1: rng.gaussian(&[c, 4 * c]).scale(1.0 / (c as f32).sqrt()),
            b1: Tensor::zeros(&[4 * c]),
            w2: rng.gaussian(&[4 * c, c]).scale(1.0 / (4.0 * c as f32).sqrt()),
            b2: Tensor::zeros(&[c]),
        }
    }

    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("norm_gain", &self.norm_gain),
            ("norm_shift", &self.norm_shift),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("norm_gain", &mut self.norm_gain),
            ("norm_shift", &mut self.norm_shift),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatLayerParams {
    pub temporal: AttentionParams,
    pub spatial: AttentionParams,
    pub ffn: FeedForwardParams,
    pub heads: usize,
}

impl RatLayerParams {
    /// Zero projections, unit gains: the layer is the identity.
    pub fn zeros(c: usize, heads: usize) -> Self {
        RatLayerParams {
            temporal: AttentionParams::zeros(c),
            spatial: AttentionParams::zeros(c),
            ffn: FeedForwardParams::zeros(c),
            heads,
        }
    }

    pub fn init(c: usize, heads: usize, rng: &mut RandomStream) -> Self {
        RatLayerParams {
            temporal: AttentionParams::init(c, rng),
            spatial: AttentionParams::init(c, rng),
            ffn: FeedForwardParams::init(c, rng),
            heads,
        }
    }

    pub fn channels(&self) -> usize {
        self.spatial.norm_gain.len()
    }

    /// Tensors keyed `temporal.w_q`, `ffn.b1`, ...
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, list) in
            [("temporal", self.temporal.named()), ("spatial", self.spatial.named()), ("ffn", self.ffn.named())]
        {
            out.extend(list.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (prefix, list) in [
            ("temporal", self.temporal.named_mut()),
            ("spatial", self.spatial.named_mut()),
            ("ffn", self.ffn.named_mut()),
        ] {
            out.extend(list.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.heads == 0 || c % self.heads != 0 {
            return shape_err("rat_layer", format!("{} heads do not divide {c} channels", self.heads));
        }
        self.temporal.check(c, "temporal_attention")?;
        self.spatial.check(c, "spatial_attention")?;
        let f = &self.ffn;
        if f.norm_gain.shape() != [c]
            || f.norm_shift.shape() != [c]
            || f.w1.shape() != [c, 4 * c]
            || f.b1.shape() != [4 * c]
            || f.w2.shape() != [4 * c, c]
            || f.b2.shape() != [c]
        {
            return shape_err("feed_forward", format!("parameters do not match {c} channels"));
        }
        Ok(())
    }
}

/// Self-attention inside each frame of a `[F, m, n, C]` part.
fn frame_self_attention(part: &Tensor, p: &AttentionParams, heads: usize) -> Result<Tensor> {
    let (f, c) = (part.dim(0), part.dim(3));
    if f == 0 {
        return Ok(part.clone());
    }
    let tokens = part.dim(1) * part.dim(2);
    let x = layer_norm(part, &p.norm_gain, &p.norm_shift, LN_EPS)?;
    let q = linear(&x, &p.w_q, None)?;
    let k = linear(&x, &p.w_k, None)?;
    let v = linear(&x, &p.w_v, None)?;
    let mut att = Tensor::zeros(part.shape());
    for i in 0..f {
        let take = |t: &Tensor| Tensor::new(&[tokens, c], t.frame(i).to_vec());
        let o = multi_head_attention(&take(&q)?, &take(&k)?, &take(&v)?, heads)?;
        att.frame_mut(i).copy_from_slice(o.data());
    }
    let out = linear(&att, &p.w_o, None)?;
    part.add(&out)
}

pub fn spatial_attention(seq: &MultiResSequence, p: &RatLayerParams) -> Result<MultiResSequence> {
    seq.validate()?;
    p.check(seq.channels())?;
    Ok(MultiResSequence {
        saliency_tokens: frame_self_attention(&seq.saliency_tokens, &p.spatial, p.heads)?,
        non_saliency_tokens: frame_self_attention(&seq.non_saliency_tokens, &p.spatial, p.heads)?,
        ..seq.clone()
    })
}

pub fn temporal_attention(seq: &MultiResSequence, p: &RatLayerParams) -> Result<MultiResSequence> {
    seq.validate()?;
    let c = seq.channels();
    p.check(c)?;
    // Without low-resolution frames there is nothing to align to.
    let h = if seq.non_saliency_times.is_empty() { 1 } else { seq.h };
    let t = seq.frames();
    let (m, n) = seq.grid();
    let (lm, ln) = (m / h, n / h);
    let low_sal =
        if h == 1 || seq.saliency_tokens.dim(0) == 0 { seq.saliency_tokens.clone() } else { avgpool_downsample(&seq.saliency_tokens, h)? };
    let low_sal = low_sal.reshape(&[seq.saliency_times.len(), lm, ln, c])?;

    // Merge both parts in time order on the shared low-resolution grid.
    let mut frames: Vec<&[f32]> = vec![&[]; t];
    for (j, &ti) in seq.saliency_times.iter().enumerate() {
        frames[ti] = low_sal.frame(j);
    }
    for (j, &ti) in seq.non_saliency_times.iter().enumerate() {
        frames[ti] = seq.non_saliency_tokens.frame(j);
    }
    let merged = Tensor::stack(&[lm, ln, c], &frames)?;

    let a = &p.temporal;
    let x = layer_norm(&merged, &a.norm_gain, &a.norm_shift, LN_EPS)?;
    let q = linear(&x, &a.w_q, None)?;
    let k = linear(&x, &a.w_k, None)?;
    let v = linear(&x, &a.w_v, None)?;
    let locations = lm * ln;
    let mut att = Tensor::zeros(merged.shape());
    for loc in 0..locations {
        let column = |src: &Tensor| {
            let mut d = Vec::with_capacity(t * c);
            for ti in 0..t {
                d.extend_from_slice(&src.frame(ti)[loc * c..(loc + 1) * c]);
            }
            Tensor::new(&[t, c], d)
        };
        let o = multi_head_attention(&column(&q)?, &column(&k)?, &column(&v)?, p.heads)?;
        for ti in 0..t {
            att.frame_mut(ti)[loc * c..(loc + 1) * c].copy_from_slice(&o.data()[ti * c..(ti + 1) * c]);
        }
    }
    let att = linear(&att, &a.w_o, None)?;

    let time_slices = |times: &[usize]| -> Result<Tensor> { att.select(times) };
    let sal_att = time_slices(&seq.saliency_times)?;
    let sal_att = if h == 1 || sal_att.dim(0) == 0 { sal_att } else { nearest_upsample(&sal_att, h)? };
    let ns_att = time_slices(&seq.non_saliency_times)?;
    Ok(MultiResSequence {
        saliency_tokens: seq.saliency_tokens.add(&sal_att.reshape(seq.saliency_tokens.shape())?)?,
        non_saliency_tokens: seq.non_saliency_tokens.add(&ns_att.reshape(seq.non_saliency_tokens.shape())?)?,
        ..seq.clone()
    })
}

fn feed_forward_part(part: &Tensor, f: &FeedForwardParams) -> Result<Tensor> {
    if part.is_empty() {
        return Ok(part.clone());
    }
    let x = layer_norm(part, &f.norm_gain, &f.norm_shift, LN_EPS)?;
    let hidden = gelu(&linear(&x, &f.w1, Some(&f.b1))?);
    part.add(&linear(&hidden, &f.w2, Some(&f.b2))?)
}

pub fn feed_forward(seq: &MultiResSequence, p: &RatLayerParams) -> Result<MultiResSequence> {
    seq.validate()?;
    p.check(seq.channels())?;
    Ok(MultiResSequence {
        saliency_tokens: feed_forward_part(&seq.saliency_tokens, &p.ffn)?,
        non_saliency_tokens: feed_forward_part(&seq.non_saliency_tokens, &p.ffn)?,
        ..seq.clone()
    })
}

pub fn rat_layer_forward(seq: &MultiResSequence, p: &RatLayerParams) -> Result<MultiResSequence> {
    let x = temporal_attention(seq, p)?;
    let x = spatial_attention(&x, p)?;
    feed_forward(&x, p)
}
