//! Quick contract and oracle suites, one per module.

use std::time::Instant;

use drca_core::dccm::{compress, CompressorParams, Mode, MultiResSequence};
use drca_core::dccm::toy::target_matrix;
use drca_core::flops::{compare, count_flops, instrument_check, OpClass};
use drca_core::gradcheck::closed_form_check;
use drca_core::model::{baseline_forward, forward, random_video, DrcaParams, HeadMode, ModelConfig, Variant};
use drca_core::numerics::test_hooks::set_corrupt_softmax;
use drca_core::numerics::{
    avgpool_downsample, decode_tnsr, encode_tnsr, layer_norm, matmul, multi_head_attention, nearest_upsample,
    softmax_lastdim, RandomStream, Tensor,
};
use drca_core::ranking::{hard_rank, perturbed_rank, PerturbConfig, SaliencyScores};
use drca_core::rat::{rat_layer_forward, RatLayerParams};

use crate::commands::{Failure, EXIT_CHECK_FAILED, EXIT_OK};
use crate::config::RunConfig;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn max_dev(t: &[f32], target: f32) -> f32 {
    t.iter().map(|v| (v - target).abs()).fold(0.0, f32::max)
}

fn softmax_matches_exp() -> Check {
    let x = RandomStream::new(1).gaussian(&[5, 7]);
    let y = softmax_lastdim(&x).map_err(e)?;
    for r in 0..5 {
        let row: Vec<f64> = (0..7).map(|j| (x.at(&[r, j]) as f64).exp()).collect();
        let z: f64 = row.iter().sum();
        for j in 0..7 {
            let d = (y.at(&[r, j]) as f64 - row[j] / z).abs();
            ensure!(d < 1e-6, "softmax row {r} col {j} off by {d:e}");
        }
    }
    Ok(())
}

fn matmul_matches_loop() -> Check {
    let mut rng = RandomStream::new(2);
    let (a, b) = (rng.gaussian(&[3, 4]), rng.gaussian(&[4, 5]));
    let c = matmul(&a, &b).map_err(e)?;
    for i in 0..3 {
        for j in 0..5 {
            let want: f64 = (0..4).map(|k| a.at(&[i, k]) as f64 * b.at(&[k, j]) as f64).sum();
            ensure!((c.at(&[i, j]) as f64 - want).abs() < 1e-5, "matmul entry ({i}, {j})");
        }
    }
    Ok(())
}

fn pool_inverts_upsample() -> Check {
    let x = RandomStream::new(3).gaussian(&[2, 2, 3, 4]);
    let back = avgpool_downsample(&nearest_upsample(&x, 2).map_err(e)?, 2).map_err(e)?;
    ensure!(back.max_abs_diff(&x) < 1e-6, "pool(upsample(x)) != x");
    Ok(())
}

fn layer_norm_standardises() -> Check {
    let x = RandomStream::new(4).gaussian(&[6, 16]).scale(3.0);
    let y = layer_norm(&x, &Tensor::full(&[16], 1.0), &Tensor::zeros(&[16]), 1e-5).map_err(e)?;
    for row in y.data().chunks(16) {
        let mean: f32 = row.iter().sum::<f32>() / 16.0;
        let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 16.0;
        ensure!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3, "mean {mean}, var {var}");
    }
    Ok(())
}

fn tnsr_roundtrip_and_corruption() -> Check {
    let x = RandomStream::new(5).gaussian(&[2, 3, 1]);
    let bytes = encode_tnsr(&x);
    ensure!(decode_tnsr(&bytes).map_err(e)? == x, "decode(encode(x)) != x");
    let mut bad = bytes.clone();
    bad[0] ^= 0xFF;
    ensure!(decode_tnsr(&bad).is_err(), "corrupt magic accepted");
    ensure!(decode_tnsr(&bytes[..bytes.len() - 1]).is_err(), "truncated file accepted");
    Ok(())
}

fn hard_rank_example() -> Check {
    let p = hard_rank(&SaliencyScores::from_slice(&[0.1, 0.9, 0.5]).map_err(e)?);
    ensure!(p.order() == [1, 2, 0], "order {:?}", p.order());
    let m = p.matrix();
    for i in 0..3 {
        let row: f32 = (0..3).map(|j| m.at(&[i, j])).sum();
        let col: f32 = (0..3).map(|j| m.at(&[j, i])).sum();
        ensure!(row == 1.0 && col == 1.0, "permutation matrix sums at {i}");
    }
    Ok(())
}

fn soft_rank_doubly_stochastic() -> Check {
    let mut rng = RandomStream::new(6);
    for t in [2usize, 5, 9] {
        let s: Vec<f32> = (0..t).map(|_| rng.normal() * 0.1).collect();
        let y = perturbed_rank(&SaliencyScores::from_slice(&s).map_err(e)?, &PerturbConfig::new(0.05, 200, 3).map_err(e)?)
            .map_err(e)?;
        ensure!(y.matrix.data().iter().all(|v| *v >= 0.0), "negative entry at T={t}");
        ensure!(max_dev(&y.row_sums(), 1.0) <= 1e-5, "row sums at T={t}");
        ensure!(max_dev(&y.col_sums(), 1.0) <= 1e-5, "column sums at T={t}");
    }
    Ok(())
}

fn soft_rank_shift_invariant() -> Check {
    let cfg = PerturbConfig::new(0.05, 300, 11).map_err(e)?;
    let s = [0.3f32, -0.1, 0.02, 0.5];
    let shifted: Vec<f32> = s.iter().map(|v| v + 4.0).collect();
    let a = perturbed_rank(&SaliencyScores::from_slice(&s).map_err(e)?, &cfg).map_err(e)?;
    let b = perturbed_rank(&SaliencyScores::from_slice(&shifted).map_err(e)?, &cfg).map_err(e)?;
    ensure!(a.matrix == b.matrix, "shift changed the smoothed ranking");
    Ok(())
}

fn closed_form_gradient() -> Check {
    for t in closed_form_check(0.05, 20_000, 7, 3).map_err(e)? {
        ensure!(t.relative_error < 0.15, "a {} b {}: relative error {:.3}", t.a, t.b, t.relative_error);
    }
    Ok(())
}

fn compressor_constant_values() -> Check {
    let c = 4;
    let mut rng = RandomStream::new(8);
    let v = [1.0f32, -0.5, 0.25, 2.0];
    let sal = Tensor::from_fn(&[2, 4, 4, c], |i| v[i % c]);
    let ns = rng.gaussian(&[3, 4, 4, c]);
    let p = CompressorParams { w_a: rng.gaussian(&[c, c]), w_b: rng.gaussian(&[c, c]), w_c: Tensor::eye(c) };
    let out = compress(&sal, &ns, &p, 2).map_err(e)?;
    let resid = avgpool_downsample(&ns, 2).map_err(e)?;
    let want = Tensor::from_fn(resid.shape(), |i| resid.data()[i] + v[i % c]);
    ensure!(out.max_abs_diff(&want) < 1e-6, "constant-value case off by {:e}", out.max_abs_diff(&want));
    Ok(())
}

fn compressor_reference_order() -> Check {
    let c = 4;
    let mut rng = RandomStream::new(9);
    let sal = rng.gaussian(&[3, 4, 4, c]);
    let ns = rng.gaussian(&[2, 4, 4, c]);
    let p = CompressorParams::init(c, &mut rng);
    let a = compress(&sal, &ns, &p, 2).map_err(e)?;
    let b = compress(&sal.select(&[2, 0, 1]).map_err(e)?, &ns, &p, 2).map_err(e)?;
    ensure!(a.max_abs_diff(&b) < 1e-5, "reference frame order changed the output");
    Ok(())
}

fn target_is_doubly_stochastic() -> Check {
    let y = target_matrix(8, &[1, 6]);
    for i in 0..8 {
        let row: f32 = (0..8).map(|j| y.at(&[i, j])).sum();
        let col: f32 = (0..8).map(|j| y.at(&[j, i])).sum();
        ensure!((row - 1.0).abs() < 1e-6 && (col - 1.0).abs() < 1e-6, "target sums at {i}");
    }
    Ok(())
}

fn attention_matches_loop() -> Check {
    let mut rng = RandomStream::new(10);
    let (lq, lk, c, heads) = (3, 5, 8, 2);
    let (q, k, v) = (rng.gaussian(&[lq, c]), rng.gaussian(&[lk, c]), rng.gaussian(&[lk, c]));
    let got = multi_head_attention(&q, &k, &v, heads).map_err(e)?;
    let d = c / heads;
    for h in 0..heads {
        for i in 0..lq {
            let s: Vec<f64> = (0..lk)
                .map(|j| (0..d).map(|x| q.at(&[i, h * d + x]) as f64 * k.at(&[j, h * d + x]) as f64).sum::<f64>())
                .map(|s| (s / (d as f64).sqrt()).exp())
                .collect();
            let z: f64 = s.iter().sum();
            for x in 0..d {
                let want: f64 = (0..lk).map(|j| s[j] / z * v.at(&[j, h * d + x]) as f64).sum();
                let diff = (got.at(&[i, h * d + x]) as f64 - want).abs();
                ensure!(diff < 1e-5, "head {h} query {i} channel {x} off by {diff:e}");
            }
        }
    }
    Ok(())
}

fn zero_layer_is_identity() -> Check {
    let x = RandomStream::new(11).gaussian(&[3, 4, 4, 8]);
    let seq = MultiResSequence::full_resolution(x.clone()).map_err(e)?;
    let out = rat_layer_forward(&seq, &RatLayerParams::zeros(8, 2)).map_err(e)?;
    ensure!(out.saliency_tokens == x, "zero-weight layer changed its input");
    Ok(())
}

fn tiny_model() -> ModelConfig {
    ModelConfig { height: 32, width: 32, ..ModelConfig::toy() }
}

fn degenerate_matches_baseline() -> Check {
    let cfg = tiny_model().uncompressed();
    let p = DrcaParams::init(&cfg, 3).map_err(e)?;
    for seed in 0..2 {
        let v = random_video(&cfg, seed);
        let a = forward(&v, &p, &cfg, Mode::Infer, &PerturbConfig::default()).map_err(e)?;
        let b = baseline_forward(&v, &p, &cfg).map_err(e)?;
        let d = a.output.max_abs_diff(&b.output);
        ensure!(d <= 1e-4, "video {seed}: logits differ by {d:e}");
    }
    Ok(())
}

fn retrieval_embedding_is_unit() -> Check {
    let cfg = ModelConfig { head: HeadMode::Retrieval { embed_out: 12 }, ..tiny_model() };
    let p = DrcaParams::init(&cfg, 4).map_err(e)?;
    let out = forward(&random_video(&cfg, 5), &p, &cfg, Mode::Infer, &PerturbConfig::default()).map_err(e)?;
    ensure!(out.output.shape() == [12], "embedding shape {:?}", out.output.shape());
    ensure!((out.output.norm() - 1.0).abs() <= 1e-5, "embedding norm {}", out.output.norm());
    Ok(())
}

fn forward_is_deterministic() -> Check {
    let cfg = tiny_model();
    let p = DrcaParams::init(&cfg, 5).map_err(e)?;
    let v = random_video(&cfg, 6);
    let a = forward(&v, &p, &cfg, Mode::Train, &PerturbConfig::default()).map_err(e)?;
    let b = forward(&v, &p, &cfg, Mode::Train, &PerturbConfig::default()).map_err(e)?;
    ensure!(a.output == b.output && a.selected == b.selected, "two identical runs differ");
    ensure!(a.selected.len() == cfg.saliency_count, "selected {:?}", a.selected);
    Ok(())
}

fn h4_law() -> Check {
    let base = ModelConfig::variant(Variant::S);
    let h1 = count_flops(&ModelConfig { compression: 1, ..base.clone() }).map_err(e)?;
    let h2 = count_flops(&base).map_err(e)?;
    let a = h1.get("rat.spatial.non_saliency", OpClass::AttentionScores);
    let b = h2.get("rat.spatial.non_saliency", OpClass::AttentionScores);
    ensure!(b > 0 && a == 16 * b, "attention scores {a} vs {b}");
    Ok(())
}

fn compression_ratio_bands() -> Check {
    for v in [Variant::S, Variant::B] {
        let cfg = ModelConfig::variant(v);
        let r = compare(&cfg, &cfg.uncompressed()).map_err(e)?.ratio;
        ensure!((0.58..=0.74).contains(&r), "{v:?} ratio {r:.4}");
    }
    let cfg = ModelConfig::variant(Variant::S).uncompressed();
    ensure!(compare(&cfg, &cfg).map_err(e)?.ratio == 1.0, "identical configs do not give ratio 1");
    Ok(())
}

fn instrumented_counts_agree() -> Check {
    let c = instrument_check(&tiny_model()).map_err(e)?;
    ensure!(c.gap <= 0.02, "analytic {} vs measured {}", c.analytic, c.measured);
    Ok(())
}

fn config_echo_roundtrips() -> Check {
    let c = RunConfig::parse("variant = s\nsaliency_count = 2\nhead = retrieval", "selftest", &[], 4)?;
    let again = RunConfig::parse(&c.echo(), "echo", &[], 0)?;
    ensure!(again == c, "echo did not parse back to the same config");
    ensure!(c.echo().contains("seed = 4"), "default seed not echoed");
    Ok(())
}

fn config_rejects_unknown_keys() -> Check {
    ensure!(RunConfig::parse("speed = 3", "selftest", &[], 0).is_err(), "unknown key accepted");
    ensure!(RunConfig::parse("", "selftest", &["compression=5".into()], 0).is_err(), "bad compression accepted");
    Ok(())
}

struct Suite {
    name: &'static str,
    checks: Vec<(&'static str, fn() -> Check)>,
}

fn suites() -> Vec<Suite> {
    vec![
        Suite {
            name: "numerics",
            checks: vec![
                ("softmax matches exp", softmax_matches_exp),
                ("matmul matches loop", matmul_matches_loop),
                ("pool inverts upsample", pool_inverts_upsample),
                ("layer norm standardises", layer_norm_standardises),
                ("tnsr roundtrip and corruption", tnsr_roundtrip_and_corruption),
            ],
        },
        Suite {
            name: "perturbed-ranking",
            checks: vec![
                ("hard rank example", hard_rank_example),
                ("soft rank doubly stochastic", soft_rank_doubly_stochastic),
                ("soft rank shift invariant", soft_rank_shift_invariant),
                ("two-frame gradient", closed_form_gradient),
            ],
        },
        Suite {
            name: "dccm",
            checks: vec![
                ("compressor constant values", compressor_constant_values),
                ("compressor reference order", compressor_reference_order),
                ("toy target doubly stochastic", target_is_doubly_stochastic),
            ],
        },
        Suite {
            name: "rat",
            checks: vec![
                ("attention matches loop", attention_matches_loop),
                ("zero layer is identity", zero_layer_is_identity),
            ],
        },
        Suite {
            name: "model",
            checks: vec![
                ("degenerate config matches baseline", degenerate_matches_baseline),
                ("retrieval embedding is unit", retrieval_embedding_is_unit),
                ("forward is deterministic", forward_is_deterministic),
            ],
        },
        Suite {
            name: "flops",
            checks: vec![
                ("h^4 law", h4_law),
                ("ratio bands", compression_ratio_bands),
                ("instrumented counts agree", instrumented_counts_agree),
            ],
        },
        Suite {
            name: "cli",
            checks: vec![
                ("config echo roundtrips", config_echo_roundtrips),
                ("config rejects unknown keys", config_rejects_unknown_keys),
            ],
        },
    ]
}

pub fn run(corrupt_softmax: bool) -> Result<u8, Failure> {
    if corrupt_softmax {
        set_corrupt_softmax(true);
        println!("selftest: softmax normaliser deliberately corrupted");
    }
    let start = Instant::now();
    let (mut passed, mut total) = (0, 0);
    for suite in suites() {
        let mut ok = 0;
        for (name, check) in &suite.checks {
            match check() {
                Ok(()) => ok += 1,
                Err(msg) => println!("  FAIL {}: {name}: {msg}", suite.name),
            }
        }
        println!("{}: {ok}/{} passed", suite.name, suite.checks.len());
        passed += ok;
        total += suite.checks.len();
    }
    println!("selftest: {passed}/{total} passed in {:.1}s", start.elapsed().as_secs_f64());
    Ok(if passed == total { EXIT_OK } else { EXIT_CHECK_FAILED })
}
