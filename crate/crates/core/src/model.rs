//! Full network: patch embedding, full-resolution stage-1 layers, the
//! compression module, resolution-align layers and a pooled linear head.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::dccm::{dccm_forward, score_net_forward, CompressorParams, Mode, MultiResSequence, ScoreNetParams};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{counter, l2_normalize, linear, mean_token, read_tnsr, write_tnsr, RandomStream, Tensor};
use crate::ranking::{hard_rank, PerturbConfig, SaliencyScores, SoftRankMatrix};
use crate::rat::{rat_layer_forward, RatLayerParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    B,
    S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Classification { num_classes: usize },
    Retrieval { embed_out: usize },
}

impl HeadMode {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadMode::Classification { num_classes } => num_classes,
            HeadMode::Retrieval { embed_out } => embed_out,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub saliency_count: usize,
    pub compression: usize,
    pub insert_after: usize,
    pub head: HeadMode,
    pub score_mid: usize,
    pub score_hidden: usize,
}

impl ModelConfig {
    /// 224x224, 8 frames, depth 12, keep 4 frames, h = 2 after layer 3.
    pub fn variant(v: Variant) -> Self {
        let (c, heads) = match v {
            Variant::B => (768, 12),
            Variant::S => (384, 6),
        };
        Self::with_dim(c, heads, 12, 8, 224, 224, 4, 2, 3, HeadMode::Classification { num_classes: 400 })
    }

    /// T=8, 64x64 (a 4x4 grid), C=16, depth 4, K=4, h=2 after layer 1.
    pub fn toy() -> Self {
        Self::with_dim(16, 2, 4, 8, 64, 64, 4, 2, 1, HeadMode::Classification { num_classes: 10 })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_dim(
        embed_dim: usize,
        heads: usize,
        depth: usize,
        frames: usize,
        height: usize,
        width: usize,
        saliency_count: usize,
        compression: usize,
        insert_after: usize,
        head: HeadMode,
    ) -> Self {
        ModelConfig {
            embed_dim,
            depth,
            heads,
            patch_size: 16,
            frames,
            height,
            width,
            saliency_count,
            compression,
            insert_after,
            head,
            score_mid: (embed_dim / 32).max(1),
            score_hidden: (embed_dim / 2).max(1),
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    /// The same network with nothing dropped or compressed.
    pub fn uncompressed(&self) -> Self {
        ModelConfig { saliency_count: self.frames, compression: 1, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("{} heads must divide embed_dim {}", self.heads, self.embed_dim));
        }
        if self.patch_size == 0 || self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return bad(format!("patch size {} must divide {}x{}", self.patch_size, self.height, self.width));
        }
        let (m, n) = self.grid();
        if m == 0 || n == 0 {
            return bad("input is smaller than one patch".into());
        }
        if self.compression == 0 || m % self.compression != 0 || n % self.compression != 0 {
            return bad(format!("compression {} must divide the {m}x{n} patch grid", self.compression));
        }
        if self.frames == 0 || self.saliency_count == 0 || self.saliency_count > self.frames {
            return bad(format!("saliency count {} outside 1..={}", self.saliency_count, self.frames));
        }
        if self.insert_after >= self.depth {
            return bad(format!("insert_after {} must be below depth {}", self.insert_after, self.depth));
        }
        if self.head.outputs() == 0 || self.score_mid == 0 || self.score_hidden == 0 {
            return bad("head and score-net widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrcaParams {
    /// `[3 P^2, C]`, rows ordered (row in patch, column in patch, colour).
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    /// `[M N, C]`
    pub spatial_pos: Tensor,
    /// `[T, C]`
    pub temporal_pos: Tensor,
    pub stage1: Vec<RatLayerParams>,
    pub score_net: ScoreNetParams,
    pub compressor: CompressorParams,
    pub rat: Vec<RatLayerParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl DrcaParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let c = cfg.embed_dim;
        let (m, n) = cfg.grid();
        let out = cfg.head.outputs();
        DrcaParams {
            patch_weight: Tensor::zeros(&[3 * cfg.patch_size * cfg.patch_size, c]),
            patch_bias: Tensor::zeros(&[c]),
            spatial_pos: Tensor::zeros(&[m * n, c]),
            temporal_pos: Tensor::zeros(&[cfg.frames, c]),
            stage1: (0..cfg.insert_after).map(|_| RatLayerParams::zeros(c, cfg.heads)).collect(),
            score_net: ScoreNetParams::zeros(c, cfg.score_mid, cfg.score_hidden),
            compressor: CompressorParams::zeros(c),
            rat: (cfg.insert_after..cfg.depth).map(|_| RatLayerParams::zeros(c, cfg.heads)).collect(),
            head_weight: Tensor::zeros(&[c, out]),
            head_bias: Tensor::zeros(&[out]),
        }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RandomStream::new(seed);
        let mut p = Self::zeros(cfg);
        let c = cfg.embed_dim;
        p.patch_weight = rng.gaussian(p.patch_weight.shape()).scale(1.0 / (p.patch_weight.dim(0) as f32).sqrt());
        p.spatial_pos = rng.gaussian(p.spatial_pos.shape()).scale(0.02);
        p.temporal_pos = rng.gaussian(p.temporal_pos.shape()).scale(0.02);
        for l in &mut p.stage1 {
            *l = RatLayerParams::init(c, cfg.heads, &mut rng);
        }
        p.score_net = ScoreNetParams::init(c, cfg.score_mid, cfg.score_hidden, 1.0, &mut rng);
        p.compressor = CompressorParams::init(c, &mut rng);
        for l in &mut p.rat {
            *l = RatLayerParams::init(c, cfg.heads, &mut rng);
        }
        p.head_weight = rng.gaussian(p.head_weight.shape()).scale(1.0 / (c as f32).sqrt());
        Ok(p)
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("patch.weight".into(), &self.patch_weight),
            ("patch.bias".into(), &self.patch_bias),
            ("pos.spatial".into(), &self.spatial_pos),
            ("pos.temporal".into(), &self.temporal_pos),
        ];
        for (i, l) in self.stage1.iter().enumerate() {
            out.extend(l.named_tensors().into_iter().map(|(n, t)| (format!("stage1.{i}.{n}"), t)));
        }
        out.extend(self.score_net.named_tensors().into_iter().map(|(n, t)| (format!("score_net.{n}"), t)));
        out.extend(self.compressor.named_tensors().into_iter().map(|(n, t)| (format!("compressor.{n}"), t)));
        for (i, l) in self.rat.iter().enumerate() {
            out.extend(l.named_tensors().into_iter().map(|(n, t)| (format!("rat.{i}.{n}"), t)));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("patch.weight".into(), &mut self.patch_weight),
            ("patch.bias".into(), &mut self.patch_bias),
            ("pos.spatial".into(), &mut self.spatial_pos),
            ("pos.temporal".into(), &mut self.temporal_pos),
        ];
        for (i, l) in self.stage1.iter_mut().enumerate() {
            out.extend(l.named_tensors_mut().into_iter().map(|(n, t)| (format!("stage1.{i}.{n}"), t)));
        }
        out.extend(self.score_net.named_tensors_mut().into_iter().map(|(n, t)| (format!("score_net.{n}"), t)));
        out.extend(self.compressor.named_tensors_mut().into_iter().map(|(n, t)| (format!("compressor.{n}"), t)));
        for (i, l) in self.rat.iter_mut().enumerate() {
            out.extend(l.named_tensors_mut().into_iter().map(|(n, t)| (format!("rat.{i}.{n}"), t)));
        }
        out.push(("head.weight".into(), &mut self.head_weight));
        out.push(("head.bias".into(), &mut self.head_bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = Self::zeros(cfg);
        for ((name, want), (_, got)) in expect.named_tensors().into_iter().zip(self.named_tensors()) {
            if want.shape() != got.shape() {
                return shape_err("DrcaParams", format!("{name} is {:?}, config needs {:?}", got.shape(), want.shape()));
            }
        }
        if self.stage1.len() != cfg.insert_after || self.rat.len() != cfg.depth - cfg.insert_after {
            return shape_err("DrcaParams", "layer count does not match config");
        }
        if self.stage1.iter().chain(&self.rat).any(|l| l.heads != cfg.heads) {
            return shape_err("DrcaParams", "head count does not match config");
        }
        Ok(())
    }
}

const MANIFEST: &str = "manifest.txt";

/// Writes one TNSR file per tensor plus `manifest.txt` (name, tab, extents
/// joined by `x`).
pub fn save_params(dir: impl AsRef<Path>, p: &DrcaParams) -> Result<()> {
    save_tensors(dir, &p.named_tensors())
}

/// The directory layout of [`save_params`] for any list of named tensors.
pub fn save_tensors(dir: impl AsRef<Path>, tensors: &[(String, &Tensor)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut manifest = String::new();
    for (name, t) in tensors {
        write_tnsr(dir.join(format!("{name}.tnsr")), t)?;
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name}\t{}\n", dims.join("x")));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|source| Error::Io { path, source })
}

pub fn load_params(dir: impl AsRef<Path>, cfg: &ModelConfig) -> Result<DrcaParams> {
    cfg.validate()?;
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    let mut listed = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, dims) = line.split_once('\t').ok_or_else(|| Error::Format {
            path: path.clone(),
            detail: format!("line {}: expected name<TAB>shape", i + 1),
        })?;
        listed.insert(name.to_string(), dims.to_string());
    }
    let mut p = DrcaParams::zeros(cfg);
    for (name, slot) in p.named_tensors_mut() {
        let dims: Vec<String> = slot.shape().iter().map(|d| d.to_string()).collect();
        let want = dims.join("x");
        match listed.remove(&name) {
            None => {
                return Err(Error::Format { path: path.clone(), detail: format!("manifest lacks tensor {name}") })
            }
            Some(got) if got != want => {
                return Err(Error::Format {
                    path: path.clone(),
                    detail: format!("{name} listed as {got}, config needs {want}"),
                })
            }
            Some(_) => {}
        }
        let file = dir.join(format!("{name}.tnsr"));
        let t = read_tnsr(&file)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format { path: file, detail: format!("shape {:?}, expected {want}", t.shape()) });
        }
        *slot = t;
    }
    if let Some(extra) = listed.keys().next() {
        return Err(Error::Format { path, detail: format!("unexpected tensor {extra} for this config") });
    }
    Ok(p)
}

/// `[T, H, W, 3]` pixels to `[T, M, N, C]` tokens with position embeddings.
pub fn patch_embed(video: &Tensor, p: &DrcaParams, cfg: &ModelConfig) -> Result<Tensor> {
    let (t, hgt, wid) = (cfg.frames, cfg.height, cfg.width);
    if video.shape() != [t, hgt, wid, 3] {
        return shape_err("patch_embed", format!("video {:?}, config expects [{t}, {hgt}, {wid}, 3]", video.shape()));
    }
    let ps = cfg.patch_size;
    let (m, n) = cfg.grid();
    let c = cfg.embed_dim;
    let mut patches = Vec::with_capacity(video.len());
    for f in 0..t {
        for i in 0..m {
            for j in 0..n {
                for y in 0..ps {
                    let row = ((f * hgt + i * ps + y) * wid + j * ps) * 3;
                    patches.extend_from_slice(&video.data()[row..row + ps * 3]);
                }
            }
        }
    }
    let patches = Tensor::new(&[t, m, n, 3 * ps * ps], patches)?;
    let tokens = linear(&patches, &p.patch_weight, Some(&p.patch_bias))?;
    let spatial = Tensor::from_fn(&[t, m, n, c], |i| p.spatial_pos.data()[i % (m * n * c)]);
    let temporal = Tensor::from_fn(&[t, m, n, c], |i| p.temporal_pos.data()[(i / (m * n * c)) * c + i % c]);
    tokens.add(&spatial)?.add(&temporal)
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Class logits, or a unit-norm embedding in retrieval mode.
    pub output: Tensor,
    pub scores: SaliencyScores,
    /// Time indices of the full-resolution frames, best score first.
    pub selected: Vec<usize>,
    pub soft_rank: Option<SoftRankMatrix>,
}

fn head(seq: &MultiResSequence, p: &DrcaParams, cfg: &ModelConfig) -> Result<Tensor> {
    let pooled = mean_token(&[&seq.saliency_tokens, &seq.non_saliency_tokens])?;
    let out = linear(&pooled, &p.head_weight, Some(&p.head_bias))?;
    Ok(match cfg.head {
        HeadMode::Classification { .. } => out,
        HeadMode::Retrieval { .. } => l2_normalize(&out),
    })
}

fn stage1(video: &Tensor, p: &DrcaParams, cfg: &ModelConfig) -> Result<Tensor> {
    let mut seq = MultiResSequence::full_resolution(patch_embed(video, p, cfg)?)?;
    for layer in &p.stage1 {
        seq = rat_layer_forward(&seq, layer)?;
    }
    Ok(seq.saliency_tokens)
}

pub fn forward(
    video: &Tensor,
    p: &DrcaParams,
    cfg: &ModelConfig,
    mode: Mode,
    perturb: &PerturbConfig,
) -> Result<ModelOutput> {
    cfg.validate()?;
    p.check(cfg)?;
    let tokens = stage1(video, p, cfg)?;
    let d = dccm_forward(
        &tokens,
        &p.score_net,
        &p.compressor,
        cfg.saliency_count,
        cfg.compression,
        mode,
        perturb,
    )?;
    let mut seq = d.sequence;
    for layer in &p.rat {
        seq = rat_layer_forward(&seq, layer)?;
    }
    Ok(ModelOutput { output: head(&seq, p, cfg)?, selected: seq.saliency_times, scores: d.scores, soft_rank: d.soft_rank })
}

/// Every layer at full resolution on every frame. Scores and the reported
/// selection are diagnostics only and are not charged to the flop counter.
pub fn baseline_forward(video: &Tensor, p: &DrcaParams, cfg: &ModelConfig) -> Result<ModelOutput> {
    cfg.validate()?;
    p.check(cfg)?;
    let tokens = stage1(video, p, cfg)?;
    let scores = counter::uncounted(|| score_net_forward(&tokens, &p.score_net))?;
    let selected = hard_rank(&scores).order()[..cfg.saliency_count].to_vec();
    let mut seq = MultiResSequence::full_resolution(tokens)?;
    for layer in &p.rat {
        seq = rat_layer_forward(&seq, layer)?;
    }
    Ok(ModelOutput { output: head(&seq, p, cfg)?, scores, selected, soft_rank: None })
}

/// Gaussian pixels, seeded.
pub fn random_video(cfg: &ModelConfig, seed: u64) -> Tensor {
    RandomStream::new(seed).gaussian(&[cfg.frames, cfg.height, cfg.width, 3])
}
