//! Closed-form operation counts for the network, written to mirror exactly
//! what the numerics kernels charge to the flop counter.

use std::fmt;

use crate::dccm::Mode;
use crate::error::Result;
use crate::model::{baseline_forward, forward, random_video, DrcaParams, HeadMode, ModelConfig};
use crate::numerics::{counter, ACTIVATION_FLOPS, NORM_FLOPS, POOL_FLOPS, SOFTMAX_FLOPS};
use crate::ranking::PerturbConfig;

/// Counting constants shared with the instrumented kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostConvention {
    pub macs_to_flops: u64,
    pub softmax: u64,
    pub normalization: u64,
    pub activation: u64,
    pub pooling: u64,
}

impl CostConvention {
    pub const STANDARD: CostConvention = CostConvention {
        macs_to_flops: 2,
        softmax: SOFTMAX_FLOPS,
        normalization: NORM_FLOPS,
        activation: ACTIVATION_FLOPS,
        pooling: POOL_FLOPS,
    };
}

impl fmt::Display for CostConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "1 MAC = {} flops; softmax {}/element; normalization {}/element; activation {}/element; pooling {}/pooled element; residual add 1/element",
            self.macs_to_flops, self.softmax, self.normalization, self.activation, self.pooling
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpClass {
    Projection,
    AttentionScores,
    AttentionApply,
    FeedForward,
    Conv,
    Pooling,
    Head,
}

impl OpClass {
    pub fn name(self) -> &'static str {
        match self {
            OpClass::Projection => "projection",
            OpClass::AttentionScores => "attention-scores",
            OpClass::AttentionApply => "attention-apply",
            OpClass::FeedForward => "feed-forward",
            OpClass::Conv => "conv",
            OpClass::Pooling => "pooling",
            OpClass::Head => "head",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsEntry {
    pub stage: &'static str,
    pub class: OpClass,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopsReport {
    pub entries: Vec<FlopsEntry>,
}

impl FlopsReport {
    fn add(&mut self, stage: &'static str, class: OpClass, count: u64) {
        if count == 0 {
            return;
        }
        match self.entries.iter_mut().find(|e| e.stage == stage && e.class == class) {
            Some(e) => e.count += count,
            None => self.entries.push(FlopsEntry { stage, class, count }),
        }
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn get(&self, stage: &str, class: OpClass) -> u64 {
        self.entries.iter().filter(|e| e.stage == stage && e.class == class).map(|e| e.count).sum()
    }

    pub fn stage_total(&self, prefix: &str) -> u64 {
        self.entries.iter().filter(|e| e.stage.starts_with(prefix)).map(|e| e.count).sum()
    }

    pub fn gflops(&self) -> String {
        format!("{:.1}", self.total() as f64 / 1e9)
    }

    /// `stage<TAB>class<TAB>count` per entry, then `total<TAB>all<TAB>count`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.stage, e.class.name(), e.count));
        }
        s.push_str(&format!("total\tall\t{}\n", self.total()));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<26} {:<17} {:>16} {:>9}\n", "stage", "class", "flops", "GFLOPs");
        for e in &self.entries {
            s.push_str(&format!(
                "{:<26} {:<17} {:>16} {:>9.1}\n",
                e.stage,
                e.class.name(),
                e.count,
                e.count as f64 / 1e9
            ));
        }
        s.push_str(&format!("{:<26} {:<17} {:>16} {:>9}\n", "total", "", self.total(), self.gflops()));
        s
    }
}

/// One attention sublayer over `groups` independent token groups of `len`
/// tokens each, with LN, Q/K/V/O projections and the residual add.
fn attention(r: &mut FlopsReport, stage: &'static str, groups: u64, len: u64, c: u64, heads: u64) {
    let tokens = groups * len;
    let pairs = groups * len * len;
    r.add(stage, OpClass::Projection, NORM_FLOPS * tokens * c + 8 * tokens * c * c + tokens * c);
    r.add(stage, OpClass::AttentionScores, 2 * pairs * c + SOFTMAX_FLOPS * pairs * heads);
    r.add(stage, OpClass::AttentionApply, 2 * pairs * c);
}

fn feed_forward(r: &mut FlopsReport, stage: &'static str, tokens: u64, c: u64) {
    let wide = 4 * c;
    r.add(
        stage,
        OpClass::FeedForward,
        NORM_FLOPS * tokens * c
            + (2 * tokens * c * wide + tokens * wide)
            + ACTIVATION_FLOPS * tokens * wide
            + (2 * tokens * wide * c + tokens * c)
            + tokens * c,
    );
}

/// One resolution-align layer: `k` frames of `full` tokens, `t - k` frames of
/// `low` tokens.
#[allow(clippy::too_many_arguments)]
fn rat_layer(
    r: &mut FlopsReport,
    names: [&'static str; 4],
    t: u64,
    k: u64,
    full: u64,
    low: u64,
    c: u64,
    heads: u64,
) {
    let [temporal, spatial_s, spatial_ns, ffn] = names;
    // Temporal alignment happens only when some frame is stored at low resolution.
    let grid = if k == t { full } else { low };
    if grid != full {
        r.add(temporal, OpClass::Pooling, POOL_FLOPS * k * full * c);
    }
    attention(r, temporal, grid, t, c, heads);
    // The saliency residual is added at full resolution, not on the grid.
    if grid != full {
        r.add(temporal, OpClass::Projection, k * (full - grid) * c);
    }
    attention(r, spatial_s, k, full, c, heads);
    attention(r, spatial_ns, t - k, low, c, heads);
    feed_forward(r, ffn, k * full + (t - k) * low, c);
}

pub fn count_flops(cfg: &ModelConfig) -> Result<FlopsReport> {
    cfg.validate()?;
    let mut r = FlopsReport::default();
    let c = cfg.embed_dim as u64;
    let heads = cfg.heads as u64;
    let t = cfg.frames as u64;
    let k = cfg.saliency_count as u64;
    let h = cfg.compression as u64;
    let (m, n) = cfg.grid();
    let full = (m * n) as u64;
    let low = full / (h * h);
    let patch_in = 3 * (cfg.patch_size * cfg.patch_size) as u64;

    let tokens = t * full;
    r.add("patch_embed", OpClass::Projection, 2 * tokens * patch_in * c + tokens * c + 2 * tokens * c);

    for _ in 0..cfg.insert_after {
        rat_layer(&mut r, ["stage1.temporal", "stage1.spatial", "stage1.spatial", "stage1.ffn"], t, t, full, full, c, heads);
    }

    if k < t {
        let (mid, hid) = (cfg.score_mid as u64, cfg.score_hidden as u64);
        r.add("dccm.score_net", OpClass::Conv, 2 * tokens * 27 * c * mid);
        r.add("dccm.score_net", OpClass::Pooling, POOL_FLOPS * tokens * mid);
        r.add(
            "dccm.score_net",
            OpClass::Projection,
            (2 * t * mid * hid + t * hid) + ACTIVATION_FLOPS * t * hid + (2 * t * hid + t),
        );
        if h > 1 {
            let (qn, kn) = ((t - k) * low, k * low);
            r.add("dccm.compressor", OpClass::Pooling, POOL_FLOPS * t * full * c);
            r.add("dccm.compressor", OpClass::Projection, 2 * qn * c * c + 4 * kn * c * c + qn * c);
            r.add("dccm.compressor", OpClass::AttentionScores, 2 * qn * kn * c + SOFTMAX_FLOPS * qn * kn);
            r.add("dccm.compressor", OpClass::AttentionApply, 2 * qn * kn * c);
        }
    }

    let low_after = if h > 1 { low } else { full };
    for _ in cfg.insert_after..cfg.depth {
        rat_layer(
            &mut r,
            ["rat.temporal", "rat.spatial.saliency", "rat.spatial.non_saliency", "rat.ffn"],
            t,
            k,
            full,
            low_after,
            c,
            heads,
        );
    }

    let out = cfg.head.outputs() as u64;
    let pooled = k * full + (t - k) * low_after;
    let mut head = POOL_FLOPS * pooled * c + 2 * c * out + out;
    if let HeadMode::Retrieval { .. } = cfg.head {
        head += NORM_FLOPS * out;
    }
    r.add("head", OpClass::Head, head);
    Ok(r)
}

/// The same network with every frame at full resolution throughout.
pub fn count_baseline_flops(cfg: &ModelConfig) -> Result<FlopsReport> {
    count_flops(&cfg.uncompressed())
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub ratio: f64,
    pub a: FlopsReport,
    pub b: FlopsReport,
}

pub fn compare(a: &ModelConfig, b: &ModelConfig) -> Result<Comparison> {
    let (ra, rb) = (count_flops(a)?, count_flops(b)?);
    Ok(Comparison { ratio: ra.total() as f64 / rb.total() as f64, a: ra, b: rb })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstrumentCheck {
    pub analytic: u64,
    pub measured: u64,
    pub gap: f64,
}

fn gap(analytic: u64, measured: u64) -> f64 {
    (analytic as f64 - measured as f64).abs() / analytic.max(1) as f64
}

/// Runs an inference forward pass with the kernel counters on and compares
/// against [`count_flops`].
pub fn instrument_check(cfg: &ModelConfig) -> Result<InstrumentCheck> {
    let analytic = count_flops(cfg)?.total();
    let params = DrcaParams::init(cfg, 0)?;
    let video = random_video(cfg, 1);
    let (out, measured) = counter::measure(|| forward(&video, &params, cfg, Mode::Infer, &PerturbConfig::default()));
    out?;
    Ok(InstrumentCheck { analytic, measured, gap: gap(analytic, measured) })
}

/// Same check for the uncompressed pipeline.
pub fn instrument_check_baseline(cfg: &ModelConfig) -> Result<InstrumentCheck> {
    let analytic = count_baseline_flops(cfg)?.total();
    let params = DrcaParams::init(cfg, 0)?;
    let video = random_video(cfg, 1);
    let (out, measured) = counter::measure(|| baseline_forward(&video, &params, cfg));
    out?;
    Ok(InstrumentCheck { analytic, measured, gap: gap(analytic, measured) })
}
