//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use drca_core::dccm::Mode;
use drca_core::model::{HeadMode, ModelConfig, Variant};
use drca_core::ranking::PerturbConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Drca,
    Baseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: String,
    pub model: ModelConfig,
    pub perturb: PerturbConfig,
    pub seed: u64,
    pub pipeline: Pipeline,
    pub mode: Mode,
    pub params: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "variant",
    "embed_dim",
    "depth",
    "heads",
    "patch_size",
    "frames",
    "height",
    "width",
    "saliency_count",
    "compression",
    "insert_after",
    "head",
    "num_classes",
    "embed_out",
    "score_mid",
    "score_hidden",
    "sigma",
    "n_samples",
    "perturb_seed",
    "seed",
    "pipeline",
    "mode",
    "params",
];

fn parse_line(line: &str, origin: &str) -> Result<Option<(String, String)>, String> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let (k, v) = body.split_once('=').ok_or_else(|| format!("{origin}: expected `key = value`, got `{body}`"))?;
    let (k, v) = (k.trim(), v.trim());
    if !KEYS.contains(&k) {
        return Err(format!("{origin}: unknown key `{k}`"));
    }
    if v.is_empty() {
        return Err(format!("{origin}: key `{k}` has no value"));
    }
    Ok(Some((k.to_string(), v.to_string())))
}

struct Values(Vec<(String, String)>);

impl Values {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("key `{key}`: cannot parse `{v}`")),
        }
    }
}

impl RunConfig {
    /// `text` is the config file body (may be empty); `overrides` are
    /// `key=value` strings applied after it; `default_seed` fills `seed` when
    /// neither sets it.
    pub fn parse(text: &str, origin: &str, overrides: &[String], default_seed: u64) -> Result<Self, String> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(kv) = parse_line(line, &format!("{origin} line {}", i + 1))? {
                values.push(kv);
            }
        }
        for o in overrides {
            match parse_line(o, "--set")? {
                Some(kv) => values.push(kv),
                None => return Err(format!("--set: empty override `{o}`")),
            }
        }
        let v = Values(values);
        let variant = v.get("variant").unwrap_or("toy").to_ascii_lowercase();
        let base = match variant.as_str() {
            "toy" => ModelConfig::toy(),
            "s" => ModelConfig::variant(Variant::S),
            "b" => ModelConfig::variant(Variant::B),
            other => return Err(format!("key `variant`: expected toy, s or b, got `{other}`")),
        };
        let head = match v.get("head").unwrap_or(match base.head {
            HeadMode::Classification { .. } => "classification",
            HeadMode::Retrieval { .. } => "retrieval",
        }) {
            "classification" => HeadMode::Classification { num_classes: v.num("num_classes", base.head.outputs())? },
            "retrieval" => HeadMode::Retrieval { embed_out: v.num("embed_out", base.head.outputs())? },
            other => return Err(format!("key `head`: expected classification or retrieval, got `{other}`")),
        };
        let embed_dim = v.num("embed_dim", base.embed_dim)?;
        let mut model = ModelConfig::with_dim(
            embed_dim,
            v.num("heads", base.heads)?,
            v.num("depth", base.depth)?,
            v.num("frames", base.frames)?,
            v.num("height", base.height)?,
            v.num("width", base.width)?,
            v.num("saliency_count", base.saliency_count)?,
            v.num("compression", base.compression)?,
            v.num("insert_after", base.insert_after)?,
            head,
        );
        model.patch_size = v.num("patch_size", base.patch_size)?;
        model.score_mid = v.num("score_mid", model.score_mid)?;
        model.score_hidden = v.num("score_hidden", model.score_hidden)?;
        model.validate().map_err(|e| e.to_string())?;
        let defaults = PerturbConfig::default();
        let perturb = PerturbConfig::new(
            v.num("sigma", defaults.sigma)?,
            v.num("n_samples", defaults.n_samples)?,
            v.num("perturb_seed", defaults.seed)?,
        )
        .map_err(|e| e.to_string())?;
        let pipeline = match v.get("pipeline").unwrap_or("drca") {
            "drca" => Pipeline::Drca,
            "baseline" => Pipeline::Baseline,
            other => return Err(format!("key `pipeline`: expected drca or baseline, got `{other}`")),
        };
        let mode = match v.get("mode").unwrap_or("infer") {
            "infer" => Mode::Infer,
            "train" => Mode::Train,
            other => return Err(format!("key `mode`: expected infer or train, got `{other}`")),
        };
        Ok(RunConfig {
            variant,
            model,
            perturb,
            seed: v.num("seed", default_seed)?,
            pipeline,
            mode,
            params: v.get("params").map(PathBuf::from),
        })
    }

    pub fn load(path: Option<&Path>, overrides: &[String], default_seed: u64) -> Result<Self, String> {
        match path {
            None => Self::parse("", "<defaults>", overrides, default_seed),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::parse(&text, &p.display().to_string(), overrides, default_seed)
            }
        }
    }

    /// Every key with its resolved value, in a form [`RunConfig::parse`]
    /// reads back.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let (head, outputs_key) = match m.head {
            HeadMode::Classification { num_classes } => ("classification", format!("num_classes = {num_classes}")),
            HeadMode::Retrieval { embed_out } => ("retrieval", format!("embed_out = {embed_out}")),
        };
        let mut lines = vec![
            format!("variant = {}", self.variant),
            format!("embed_dim = {}", m.embed_dim),
            format!("depth = {}", m.depth),
            format!("heads = {}", m.heads),
            format!("patch_size = {}", m.patch_size),
            format!("frames = {}", m.frames),
            format!("height = {}", m.height),
            format!("width = {}", m.width),
            format!("saliency_count = {}", m.saliency_count),
            format!("compression = {}", m.compression),
            format!("insert_after = {}", m.insert_after),
            format!("head = {head}"),
            outputs_key,
            format!("score_mid = {}", m.score_mid),
            format!("score_hidden = {}", m.score_hidden),
            format!("sigma = {}", self.perturb.sigma),
            format!("n_samples = {}", self.perturb.n_samples),
            format!("perturb_seed = {}", self.perturb.seed),
            format!("seed = {}", self.seed),
            format!("pipeline = {}", if self.pipeline == Pipeline::Drca { "drca" } else { "baseline" }),
            format!("mode = {}", if self.mode == Mode::Infer { "infer" } else { "train" }),
        ];
        if let Some(p) = &self.params {
            lines.push(format!("params = {}", p.display()));
        }
        lines.iter().map(|l| format!("{l}\n")).collect()
    }
}
