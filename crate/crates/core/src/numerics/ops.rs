use crate::error::{shape_err, Error, Result};
use crate::numerics::{counter, test_hooks, Tensor};

/// Flops charged per softmax element (shift, exp, shared sum, divide).
pub const SOFTMAX_FLOPS: u64 = 5;
/// Flops charged per element by layer normalization and L2 normalization.
pub const NORM_FLOPS: u64 = 4;
/// Flops charged per element by an elementwise nonlinearity.
pub const ACTIVATION_FLOPS: u64 = 1;
/// Flops charged per source element reduced by an average pool.
pub const POOL_FLOPS: u64 = 1;

/// `a [m x k] * b [k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return shape_err("matmul", format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = Tensor::zeros(&[m, n]);
    matmul_into(a.data(), b.data(), out.data_mut(), m, k, n);
    counter::record(2 * (m * k * n) as u64);
    Ok(out)
}

fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_in_place(row: &mut [f32], scale: f32) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v * scale));
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v * scale - max).exp();
        sum += *v;
    }
    if test_hooks::softmax_corrupted() {
        sum *= 1.01;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax over the last axis, max-shifted for stability.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().ok_or_else(|| Error::InvalidArgument("softmax of a scalar".into()))?;
    if c == 0 {
        return shape_err("softmax_lastdim", "last axis is empty");
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        softmax_in_place(row, 1.0);
    }
    counter::record(SOFTMAX_FLOPS * x.len() as u64);
    Ok(out)
}

fn spatial_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let r = t.rank();
    if r < 3 {
        return shape_err(op, format!("need [..., M, N, C], got {:?}", t.shape()));
    }
    let s = t.shape();
    let lead: usize = s[..r - 3].iter().product();
    Ok((lead, s[r - 3], s[r - 2], s[r - 1]))
}

/// Mean over each non-overlapping `h x h` block of the two axes before the
/// channel axis.
pub fn avgpool_downsample(t: &Tensor, h: usize) -> Result<Tensor> {
    let (lead, m, n, c) = spatial_dims(t, "avgpool_downsample")?;
    if h == 0 || m % h != 0 || n % h != 0 {
        return shape_err("avgpool_downsample", format!("factor {h} does not divide {m}x{n}"));
    }
    let (mo, no) = (m / h, n / h);
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = mo;
    shape[r - 2] = no;
    let mut out = Tensor::zeros(&shape);
    let inv = 1.0 / (h * h) as f32;
    let src = t.data();
    let dst = out.data_mut();
    for l in 0..lead {
        for i in 0..m {
            for j in 0..n {
                let s = ((l * m + i) * n + j) * c;
                let d = ((l * mo + i / h) * no + j / h) * c;
                for ch in 0..c {
                    dst[d + ch] += src[s + ch];
                }
            }
        }
    }
    for v in dst.iter_mut() {
        *v *= inv;
    }
    counter::record(POOL_FLOPS * t.len() as u64);
    Ok(out)
}

/// Replicates every token into an `h x h` block.
pub fn nearest_upsample(t: &Tensor, h: usize) -> Result<Tensor> {
    let (lead, m, n, c) = spatial_dims(t, "nearest_upsample")?;
    if h == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (mo, no) = (m * h, n * h);
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = mo;
    shape[r - 2] = no;
    let mut out = Tensor::zeros(&shape);
    let src = t.data();
    let dst = out.data_mut();
    for l in 0..lead {
        for i in 0..mo {
            for j in 0..no {
                let s = ((l * m + i / h) * n + j / h) * c;
                let d = ((l * mo + i) * no + j) * c;
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    Ok(out)
}

/// Affine map along the last axis: `x [..., cin] * weight [cin x cout] + bias`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if weight.rank() != 2 {
        return shape_err("linear", format!("weight must be rank 2, got {:?}", weight.shape()));
    }
    let (cin, cout) = (weight.dim(0), weight.dim(1));
    if x.shape().last() != Some(&cin) {
        return shape_err("linear", format!("input {:?} does not end in {cin}", x.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return shape_err("linear", format!("bias {:?} for {cout} outputs", b.shape()));
        }
    }
    let rows = x.len() / cin;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    let mut out = Tensor::zeros(&shape);
    matmul_into(x.data(), weight.data(), out.data_mut(), rows, cin, cout);
    let mut flops = 2 * (rows * cin * cout) as u64;
    if let Some(b) = bias {
        for row in out.data_mut().chunks_exact_mut(cout) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        flops += (rows * cout) as u64;
    }
    counter::record(flops);
    Ok(out)
}

/// Per-token normalization over the channel axis followed by gain and shift.
pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor, eps: f32) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
    }
    let c = *x.shape().last().unwrap_or(&0);
    if gain.shape() != [c] || shift.shape() != [c] {
        return shape_err(
            "layer_norm",
            format!("gain {:?} / shift {:?} for {c} channels", gain.shape(), shift.shape()),
        );
    }
    let mut out = x.clone();
    if c > 0 {
        for row in out.data_mut().chunks_exact_mut(c) {
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for ((v, &g), &b) in row.iter_mut().zip(gain.data()).zip(shift.data()) {
                *v = (*v - mean) * inv * g + b;
            }
        }
    }
    counter::record(NORM_FLOPS * x.len() as u64);
    Ok(out)
}

/// Same-padded cross-correlation over (time, height, width).
///
/// `x` is `[T, M, N, cin]`, `kernel` is `[kt, kh, kw, cin, cout]` with odd
/// spatial/temporal extents; out-of-range source positions read as zero.
pub fn conv3d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 || kernel.rank() != 5 {
        return shape_err("conv3d", format!("input {:?}, kernel {:?}", x.shape(), kernel.shape()));
    }
    let (t, m, n, cin) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kt, kh, kw, kcin, cout) =
        (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3), kernel.dim(4));
    if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return shape_err("conv3d", format!("kernel extents {kt}x{kh}x{kw} must be odd"));
    }
    if kcin != cin {
        return shape_err("conv3d", format!("kernel expects {kcin} input channels, input has {cin}"));
    }
    let mut out = Tensor::zeros(&[t, m, n, cout]);
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let xs = x.data();
    let ks = kernel.data();
    let os = out.data_mut();
    for ti in 0..t {
        for mi in 0..m {
            for ni in 0..n {
                let o = ((ti * m + mi) * n + ni) * cout;
                let dst = &mut os[o..o + cout];
                for a in 0..kt {
                    let Some(st) = (ti + a).checked_sub(pt).filter(|&v| v < t) else { continue };
                    for b in 0..kh {
                        let Some(sm) = (mi + b).checked_sub(ph).filter(|&v| v < m) else { continue };
                        for d in 0..kw {
                            let Some(sn) = (ni + d).checked_sub(pw).filter(|&v| v < n) else { continue };
                            let src = &xs[((st * m + sm) * n + sn) * cin..][..cin];
                            let tap = &ks[((a * kh + b) * kw + d) * cin * cout..][..cin * cout];
                            for (ci, &xv) in src.iter().enumerate() {
                                for (o, &kv) in dst.iter_mut().zip(&tap[ci * cout..(ci + 1) * cout]) {
                                    *o += xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    counter::record(2 * (t * m * n * kt * kh * kw * cin * cout) as u64);
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    counter::record(ACTIVATION_FLOPS * x.len() as u64);
    x.map(|v| v.max(0.0))
}

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: &Tensor) -> Tensor {
    const K: f32 = 0.797_884_6; // sqrt(2 / pi)
    counter::record(ACTIVATION_FLOPS * x.len() as u64);
    x.map(|v| 0.5 * v * (1.0 + (K * (v + 0.044_715 * v * v * v)).tanh()))
}

/// Mean over every axis except the leading and the last: `[L, ..., C] -> [L, C]`.
pub fn frame_mean_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return shape_err("frame_mean_pool", format!("rank {} input", x.rank()));
    }
    let lead = x.dim(0);
    let c = *x.shape().last().unwrap();
    let per = if lead == 0 { 0 } else { x.len() / (lead * c.max(1)) };
    let mut out = Tensor::zeros(&[lead, c]);
    for (l, frame) in (0..lead).map(|l| (l, x.frame(l))) {
        let dst = &mut out.data_mut()[l * c..(l + 1) * c];
        for tok in frame.chunks_exact(c) {
            for (o, &v) in dst.iter_mut().zip(tok) {
                *o += v;
            }
        }
        if per > 0 {
            let inv = 1.0 / per as f32;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
    }
    counter::record(POOL_FLOPS * x.len() as u64);
    Ok(out)
}

/// Mean token of one or more tensors sharing the channel width; every token
/// weighs the same regardless of which tensor holds it.
pub fn mean_token(parts: &[&Tensor]) -> Result<Tensor> {
    let c = parts
        .first()
        .and_then(|p| p.shape().last().copied())
        .ok_or_else(|| Error::InvalidArgument("mean_token of nothing".into()))?;
    let mut acc = vec![0.0f64; c];
    let mut tokens = 0usize;
    for p in parts {
        if p.shape().last() != Some(&c) {
            return shape_err("mean_token", format!("channel mismatch: {:?}", p.shape()));
        }
        for tok in p.data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(tok) {
                *a += v as f64;
            }
        }
        tokens += p.len() / c;
        counter::record(POOL_FLOPS * p.len() as u64);
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument("mean_token over zero tokens".into()));
    }
    Ok(Tensor::from_fn(&[c], |i| (acc[i] / tokens as f64) as f32))
}

pub fn l2_normalize(x: &Tensor) -> Tensor {
    counter::record(NORM_FLOPS * x.len() as u64);
    let norm = x.norm();
    if norm == 0.0 {
        x.clone()
    } else {
        x.scale(1.0 / norm)
    }
}

/// Scaled dot-product attention with `heads` heads over column blocks.
///
/// `q` is `[lq, c]`, `k` and `v` are `[lk, c]`; head `i` uses columns
/// `i*c/heads .. (i+1)*c/heads` and is scaled by `1/sqrt(c/heads)`.
pub fn multi_head_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || v.shape() != k.shape() || q.dim(1) != k.dim(1) {
        return shape_err(
            "multi_head_attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        );
    }
    let (lq, lk, c) = (q.dim(0), k.dim(0), q.dim(1));
    if heads == 0 || c % heads != 0 {
        return shape_err("multi_head_attention", format!("{heads} heads do not divide {c} channels"));
    }
    if lk == 0 {
        return shape_err("multi_head_attention", "no keys to attend to");
    }
    let d = c / heads;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = Tensor::zeros(&[lq, c]);
    let mut scores = vec![0.0f32; lk];
    let (qs, ks, vs) = (q.data(), k.data(), v.data());
    for head in 0..heads {
        let cols = head * d..(head + 1) * d;
        for i in 0..lq {
            let qi = &qs[i * c..][cols.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &ks[j * c..][cols.clone()];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
            }
            softmax_in_place(&mut scores, scale);
            let oi = &mut out.data_mut()[i * c..][cols.clone()];
            for (j, &w) in scores.iter().enumerate() {
                let vj = &vs[j * c..][cols.clone()];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += w * vv;
                }
            }
        }
    }
    let pairs = (lq * lk) as u64;
    counter::record(4 * pairs * c as u64 + SOFTMAX_FLOPS * pairs * heads as u64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|p| a.at(&[i, p]) as f64 * b.at(&[p, j]) as f64).sum::<f64>() as f32
        })
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let b = RandomStream::new(1).gaussian(&[3, 4]);
        assert_eq!(matmul(&Tensor::eye(3), &b).unwrap(), b);
        let a = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let c = Tensor::matrix(&[&[0.0], &[1.0]]).unwrap();
        assert_eq!(matmul(&a, &c).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RandomStream::new(7);
        let a = rng.gaussian(&[5, 7]);
        let b = rng.gaussian(&[7, 3]);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-5);
    }

    #[test]
    fn matmul_shape_error_is_descriptive() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = RandomStream::new(9);
        for _ in 0..10 {
            let (a, b, c) = (rng.gaussian(&[4, 4]), rng.gaussian(&[4, 4]), rng.gaussian(&[4, 4]));
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right) < 1e-4);
        }
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_lastdim(&Tensor::vector(&[0.0, 0.0, 0.0])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        let s = softmax_lastdim(&Tensor::vector(&[1000.0, 0.0])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1].abs() < 1e-6);
        let x = [1.0f64, 2.0, 3.0];
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let s = softmax_lastdim(&Tensor::vector(&[1.0, 2.0, 3.0])).unwrap();
        for (got, v) in s.data().iter().zip(x) {
            assert!((*got as f64 - v.exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariance_and_rows() {
        let mut rng = RandomStream::new(3);
        let x = rng.gaussian(&[6, 9]);
        let a = softmax_lastdim(&x).unwrap();
        let b = softmax_lastdim(&x.map(|v| v + 17.5)).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
        for row in a.data().chunks(9) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn avgpool_cases() {
        let c = Tensor::full(&[2, 4, 4, 3], 1.5);
        assert_eq!(avgpool_downsample(&c, 2).unwrap(), Tensor::full(&[2, 2, 2, 3], 1.5));
        let t = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_downsample(&t, 2).unwrap().data(), &[2.5]);
        assert!(avgpool_downsample(&Tensor::zeros(&[3, 4, 1]), 2).is_err());
    }

    #[test]
    fn avgpool_matches_block_loop() {
        let x = RandomStream::new(4).gaussian(&[8, 8, 3]);
        let got = avgpool_downsample(&x, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for c in 0..3 {
                    let mut s = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            s += x.at(&[2 * i + a, 2 * j + b, c]);
                        }
                    }
                    assert!((got.at(&[i, j, c]) - s / 4.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn upsample_cases() {
        let x = RandomStream::new(5).gaussian(&[2, 3, 3, 2]);
        assert_eq!(nearest_upsample(&x, 1).unwrap(), x);
        let one = Tensor::full(&[1, 1, 1], 4.0);
        assert_eq!(nearest_upsample(&one, 2).unwrap(), Tensor::full(&[2, 2, 1], 4.0));
    }

    #[test]
    fn pool_then_upsample_is_blockwise_mean() {
        let x = RandomStream::new(6).gaussian(&[2, 6, 6, 2]);
        let h = 3;
        let round = nearest_upsample(&avgpool_downsample(&x, h).unwrap(), h).unwrap();
        assert_eq!(round.shape(), x.shape());
        for t in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    for c in 0..2 {
                        let (bi, bj) = (i / h * h, j / h * h);
                        let mut s = 0.0;
                        for a in 0..h {
                            for b in 0..h {
                                s += x.at(&[t, bi + a, bj + b, c]);
                            }
                        }
                        assert!((round.at(&[t, i, j, c]) - s / 9.0).abs() < 1e-5);
                    }
                }
            }
        }
        assert!((round.mean() - x.mean()).abs() < 1e-5);
    }

    #[test]
    fn linear_cases() {
        let x = RandomStream::new(8).gaussian(&[3, 4]);
        assert!(linear(&x, &Tensor::eye(4), Some(&Tensor::zeros(&[4]))).unwrap().max_abs_diff(&x) < 1e-7);
        let y = linear(
            &Tensor::vector(&[1.0, 1.0]),
            &Tensor::matrix(&[&[1.0], &[1.0]]).unwrap(),
            Some(&Tensor::vector(&[1.0])),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert!(linear(&x, &Tensor::eye(3), None).is_err());
    }

    #[test]
    fn linear_matches_matmul_plus_broadcast() {
        let mut rng = RandomStream::new(10);
        let x = rng.gaussian(&[2, 3, 5]);
        let w = rng.gaussian(&[5, 4]);
        let b = rng.gaussian(&[4]);
        let got = linear(&x, &w, Some(&b)).unwrap();
        let flat = matmul(&x.clone().reshape(&[6, 5]).unwrap(), &w).unwrap();
        let expect = Tensor::from_fn(&[2, 3, 4], |i| flat.data()[i] + b.data()[i % 4]);
        assert!(got.max_abs_diff(&expect) < 1e-5);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::vector(&[1.0; 4]);
        let zeros = Tensor::zeros(&[4]);
        let out = layer_norm(&Tensor::full(&[4], 3.0), &ones, &zeros, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out = layer_norm(&Tensor::vector(&[1.0, -1.0]), &Tensor::vector(&[1.0, 1.0]), &Tensor::zeros(&[2]), 1e-12)
            .unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-6 && (out.data()[1] + 1.0).abs() < 1e-6);
        let x = RandomStream::new(12).gaussian(&[64]).scale(3.0);
        let out = layer_norm(&x, &Tensor::full(&[64], 1.0), &Tensor::zeros(&[64]), 1e-6).unwrap();
        let mean = out.mean();
        let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 64.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        assert!(layer_norm(&x, &ones, &zeros, 0.0).is_err());
    }

    fn conv3d_oracle(x: &Tensor, k: &Tensor) -> Tensor {
        let (t, m, n, cin) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (kt, kh, kw, cout) = (k.dim(0), k.dim(1), k.dim(2), k.dim(4));
        let mut out = Tensor::zeros(&[t, m, n, cout]);
        for ti in 0..t as i64 {
            for mi in 0..m as i64 {
                for ni in 0..n as i64 {
                    for co in 0..cout {
                        let mut acc = 0.0f64;
                        for a in 0..kt as i64 {
                            for b in 0..kh as i64 {
                                for d in 0..kw as i64 {
                                    let (st, sm, sn) =
                                        (ti + a - kt as i64 / 2, mi + b - kh as i64 / 2, ni + d - kw as i64 / 2);
                                    if st < 0 || sm < 0 || sn < 0 || st >= t as i64 || sm >= m as i64 || sn >= n as i64 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        acc += x.at(&[st as usize, sm as usize, sn as usize, ci]) as f64
                                            * k.at(&[a as usize, b as usize, d as usize, ci, co]) as f64;
                                    }
                                }
                            }
                        }
                        out.set(&[ti as usize, mi as usize, ni as usize, co], acc as f32);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3d_identity_kernel() {
        let x = RandomStream::new(13).gaussian(&[3, 4, 4, 1]);
        let k = Tensor::full(&[1, 1, 1, 1, 1], 1.0);
        assert_eq!(conv3d(&x, &k).unwrap(), x);
    }

    #[test]
    fn conv3d_impulse_response() {
        let mut x = Tensor::zeros(&[5, 5, 5, 1]);
        x.set(&[2, 2, 2, 0], 1.0);
        let out = conv3d(&x, &Tensor::full(&[3, 3, 3, 1, 1], 1.0)).unwrap();
        for t in 0..5usize {
            for i in 0..5usize {
                for j in 0..5usize {
                    let inside = t.abs_diff(2) <= 1 && i.abs_diff(2) <= 1 && j.abs_diff(2) <= 1;
                    assert_eq!(out.at(&[t, i, j, 0]), if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn conv3d_matches_nested_loops() {
        let mut rng = RandomStream::new(14);
        let x = rng.gaussian(&[3, 4, 5, 2]);
        let k = rng.gaussian(&[3, 3, 3, 2, 3]);
        assert!(conv3d(&x, &k).unwrap().max_abs_diff(&conv3d_oracle(&x, &k)) < 1e-5);
        assert!(conv3d(&x, &Tensor::zeros(&[2, 3, 3, 2, 3])).is_err());
    }

    #[test]
    fn attention_single_key_returns_value() {
        let mut rng = RandomStream::new(15);
        let q = rng.gaussian(&[3, 4]);
        let k = rng.gaussian(&[1, 4]);
        let v = rng.gaussian(&[1, 4]);
        let out = multi_head_attention(&q, &k, &v, 2).unwrap();
        for i in 0..3 {
            for c in 0..4 {
                assert!((out.at(&[i, c]) - v.at(&[0, c])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn counter_charges_documented_costs() {
        let a = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[4, 5]);
        let (_, f) = counter::measure(|| matmul(&a, &b).unwrap());
        assert_eq!(f, 2 * 3 * 4 * 5);
        let (_, f) = counter::measure(|| linear(&a, &b, Some(&Tensor::zeros(&[5]))).unwrap());
        assert_eq!(f, 2 * 3 * 4 * 5 + 15);
        let (_, f) = counter::measure(|| softmax_lastdim(&a).unwrap());
        assert_eq!(f, 5 * 12);
    }
}
