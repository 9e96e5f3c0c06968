use crate::error::{shape_err, Error, Result};
use crate::numerics::{avgpool_downsample, linear, multi_head_attention, RandomStream, Tensor};

/// Query, key and value projections of the saliency-frame-reference
/// compressor, each `[C, C]` without bias.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressorParams {
    pub w_a: Tensor,
    pub w_b: Tensor,
    pub w_c: Tensor,
}

impl CompressorParams {
    pub fn zeros(c: usize) -> Self {
        CompressorParams { w_a: Tensor::zeros(&[c, c]), w_b: Tensor::zeros(&[c, c]), w_c: Tensor::zeros(&[c, c]) }
    }

    pub fn init(c: usize, rng: &mut RandomStream) -> Self {
        let s = 1.0 / (c as f32).sqrt();
        CompressorParams {
            w_a: rng.gaussian(&[c, c]).scale(s),
            w_b: rng.gaussian(&[c, c]).scale(s),
            w_c: rng.gaussian(&[c, c]).scale(s),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("w_a", &self.w_a), ("w_b", &self.w_b), ("w_c", &self.w_c)]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("w_a", &mut self.w_a), ("w_b", &mut self.w_b), ("w_c", &mut self.w_c)]
    }
}

fn pool(t: &Tensor, h: usize) -> Result<Tensor> {
    if h == 1 {
        Ok(t.clone())
    } else {
        avgpool_downsample(t, h)
    }
}

/// Compresses non-saliency frames to `1/h` resolution per side.
///
/// Every pooled non-saliency token queries the pooled tokens of all saliency
/// frames at once (single head, scale `1/sqrt(C)`); the attention output is
/// added to the pooled non-saliency tokens.
///
/// Pooling commutes with the bias-free projections, so tokens are pooled
/// first and projected at the reduced resolution.
pub fn compress(saliency: &Tensor, non_saliency: &Tensor, p: &CompressorParams, h: usize) -> Result<Tensor> {
    if saliency.rank() != 4 || non_saliency.rank() != 4 || saliency.shape()[1..] != non_saliency.shape()[1..] {
        return shape_err(
            "compress",
            format!("saliency {:?} and non-saliency {:?} frames differ", saliency.shape(), non_saliency.shape()),
        );
    }
    if saliency.dim(0) == 0 {
        return Err(Error::InvalidArgument("compress needs at least one saliency frame".into()));
    }
    let (m, n, c) = (saliency.dim(1), saliency.dim(2), saliency.dim(3));
    if h == 0 || m % h != 0 || n % h != 0 {
        return shape_err("compress", format!("factor {h} does not divide {m}x{n}"));
    }
    if p.w_a.shape() != [c, c] || p.w_b.shape() != [c, c] || p.w_c.shape() != [c, c] {
        return shape_err("compress", format!("projections must be [{c}, {c}]"));
    }
    let out_shape = [non_saliency.dim(0), m / h, n / h, c];
    if non_saliency.dim(0) == 0 {
        return Ok(Tensor::zeros(&out_shape));
    }
    let low_ns = pool(non_saliency, h)?;
    let low_s = pool(saliency, h)?;
    let rows_q = low_ns.len() / c;
    let rows_kv = low_s.len() / c;
    let q = linear(&low_ns, &p.w_a, None)?.reshape(&[rows_q, c])?;
    let k = linear(&low_s, &p.w_b, None)?.reshape(&[rows_kv, c])?;
    let v = linear(&low_s, &p.w_c, None)?.reshape(&[rows_kv, c])?;
    let attended = multi_head_attention(&q, &k, &v, 1)?.reshape(&out_shape)?;
    attended.add(&low_ns)
}
