//! Differentiable context-aware compression: a score-net rates every frame,
//! the hard ranking splits frames into saliency and non-saliency parts, and
//! non-saliency frames are compressed by cross-attending to the saliency
//! frames at the reduced resolution.

mod compressor;
mod score_net;
mod sequence;
pub mod toy;

pub use compressor::{compress, CompressorParams};
pub use score_net::{score_net_backward, score_net_forward, ScoreNetParams};
pub use sequence::MultiResSequence;

use crate::error::{Error, Result};
use crate::numerics::{counter, Tensor};
use crate::ranking::{hard_rank, perturbed_rank, topk_split, PerturbConfig, SaliencyScores, SoftRankMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Infer,
    Train,
}

#[derive(Clone, Debug)]
pub struct DccmOutput {
    pub sequence: MultiResSequence,
    pub scores: SaliencyScores,
    /// Smoothed ranking for the gradient branch; present in train mode only.
    pub soft_rank: Option<SoftRankMatrix>,
}

/// Scores the frames, keeps the top `k` at full resolution and compresses the
/// rest by `h` per side.
///
/// With `k == T` nothing is compressed and the score-net output only feeds
/// diagnostics, so its cost is not charged to the flop counter. With `h == 1`
/// there is no resolution change and non-saliency tokens pass through as-is.
pub fn dccm_forward(
    tokens: &Tensor,
    score_p: &ScoreNetParams,
    comp_p: &CompressorParams,
    k: usize,
    h: usize,
    mode: Mode,
    cfg: &PerturbConfig,
) -> Result<DccmOutput> {
    if tokens.rank() != 4 {
        return Err(Error::Shape { op: "dccm_forward", detail: format!("tokens {:?}", tokens.shape()) });
    }
    let (t, m, n, c) = (tokens.dim(0), tokens.dim(1), tokens.dim(2), tokens.dim(3));
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!("saliency count {k} outside 1..={t}")));
    }
    if h == 0 || m % h != 0 || n % h != 0 {
        return Err(Error::InvalidArgument(format!("compression factor {h} does not divide {m}x{n}")));
    }
    let scores = if k == t {
        counter::uncounted(|| score_net_forward(tokens, score_p))?
    } else {
        score_net_forward(tokens, score_p)?
    };
    let ranking = hard_rank(&scores);
    let split = topk_split(tokens, &ranking, k)?;
    let non_saliency = if split.non_saliency_times.is_empty() {
        Tensor::zeros(&[0, m / h, n / h, c])
    } else if h == 1 {
        split.non_saliency
    } else {
        compress(&split.saliency, &split.non_saliency, comp_p, h)?
    };
    let soft_rank = match mode {
        Mode::Infer => None,
        Mode::Train => Some(perturbed_rank(&scores, cfg)?),
    };
    let sequence = MultiResSequence::new(
        split.saliency,
        non_saliency,
        split.saliency_times,
        split.non_saliency_times,
        h,
    )?;
    Ok(DccmOutput { sequence, scores, soft_rank })
}
