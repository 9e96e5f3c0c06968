use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Tokens of a video split into full-resolution saliency frames and
/// `h`-downsampled non-saliency frames, each frame tagged with its original
/// time index.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiResSequence {
    /// `[K, M, N, C]`
    pub saliency_tokens: Tensor,
    /// `[T - K, M / h, N / h, C]`
    pub non_saliency_tokens: Tensor,
    pub saliency_times: Vec<usize>,
    pub non_saliency_times: Vec<usize>,
    pub h: usize,
}

impl MultiResSequence {
    pub fn new(
        saliency_tokens: Tensor,
        non_saliency_tokens: Tensor,
        saliency_times: Vec<usize>,
        non_saliency_times: Vec<usize>,
        h: usize,
    ) -> Result<Self> {
        let seq = MultiResSequence { saliency_tokens, non_saliency_tokens, saliency_times, non_saliency_times, h };
        seq.validate()?;
        Ok(seq)
    }

    /// Every frame at full resolution, in time order.
    pub fn full_resolution(tokens: Tensor) -> Result<Self> {
        if tokens.rank() != 4 {
            return shape_err("MultiResSequence", format!("tokens {:?}", tokens.shape()));
        }
        let (t, m, n, c) = (tokens.dim(0), tokens.dim(1), tokens.dim(2), tokens.dim(3));
        Self::new(tokens, Tensor::zeros(&[0, m, n, c]), (0..t).collect(), Vec::new(), 1)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.saliency_tokens.shape();
        let ns = self.non_saliency_tokens.shape();
        if s.len() != 4 || ns.len() != 4 {
            return shape_err("MultiResSequence", format!("parts {s:?} and {ns:?} must be rank 4"));
        }
        let h = self.h;
        if h == 0 || s[1] % h != 0 || s[2] % h != 0 {
            return shape_err("MultiResSequence", format!("factor {h} does not divide {}x{}", s[1], s[2]));
        }
        if ns[1..] != [s[1] / h, s[2] / h, s[3]] {
            return shape_err("MultiResSequence", format!("non-saliency {ns:?} does not match {s:?} at h={h}"));
        }
        if s[0] != self.saliency_times.len() || ns[0] != self.non_saliency_times.len() {
            return shape_err("MultiResSequence", "time index count differs from frame count");
        }
        let t = self.frames();
        let mut seen = vec![false; t];
        for &i in self.saliency_times.iter().chain(&self.non_saliency_times) {
            if i >= t || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "time indices {:?} + {:?} do not partition 0..{t}",
                    self.saliency_times, self.non_saliency_times
                )));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.saliency_times.len() + self.non_saliency_times.len()
    }

    pub fn channels(&self) -> usize {
        self.saliency_tokens.dim(3)
    }

    /// Full-resolution grid `(M, N)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.saliency_tokens.dim(1), self.saliency_tokens.dim(2))
    }

    pub fn token_count(&self) -> usize {
        let c = self.channels();
        (self.saliency_tokens.len() + self.non_saliency_tokens.len()) / c.max(1)
    }

    /// Reassembles a `[T, M, N, C]` tensor in time order. Only defined when no
    /// frame is stored at reduced resolution.
    pub fn to_time_ordered(&self) -> Result<Tensor> {
        if self.h != 1 && !self.non_saliency_times.is_empty() {
            return Err(Error::InvalidArgument("sequence holds low-resolution frames".into()));
        }
        let (m, n) = self.grid();
        let frame_shape = [m, n, self.channels()];
        let mut frames: Vec<&[f32]> = vec![&[]; self.frames()];
        for (j, &t) in self.saliency_times.iter().enumerate() {
            frames[t] = self.saliency_tokens.frame(j);
        }
        for (j, &t) in self.non_saliency_times.iter().enumerate() {
            frames[t] = self.non_saliency_tokens.frame(j);
        }
        Tensor::stack(&frame_shape, &frames)
    }
}
