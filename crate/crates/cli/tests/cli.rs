use std::path::Path;
use std::process::{Command, Output};

use drca_core::numerics::{read_tnsr, write_tnsr, Tensor};

fn drca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drca")).args(args).current_dir(dir).env_remove("DRCA_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn line_value<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(prefix)).unwrap_or_else(|| panic!("no `{prefix}` line in:\n{text}")).trim()
}

#[test]
fn rank_prints_order_and_unit_sums() {
    let dir = tempfile::tempdir().unwrap();
    write_tnsr(dir.path().join("s.tnsr"), &Tensor::vector(&[0.1, 0.9, 0.5])).unwrap();
    let o = drca(dir.path(), &["rank", "s.tnsr", "--sigma", "0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(line_value(&text, "order:"), "1 2 0");
    for key in ["row sums:", "col sums:"] {
        for v in line_value(&text, key).split_whitespace() {
            assert_eq!(v, "1.000");
        }
    }
}

#[test]
fn rank_rejects_corrupt_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.tnsr"), b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
    let o = drca(dir.path(), &["rank", "bad.tnsr"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.tnsr"), "{}", stderr(&o));
    let o = drca(dir.path(), &["rank", "missing.tnsr"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("missing.tnsr"));
    write_tnsr(dir.path().join("m.tnsr"), &Tensor::zeros(&[2, 2])).unwrap();
    assert_eq!(drca(dir.path(), &["rank", "m.tnsr"]).status.code(), Some(2));
}

#[test]
fn grad_check_defaults_pass_and_echo_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let o = drca(dir.path(), &["grad-check"]);
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("sigma = 0.05"), "{text}");
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(line_value(&text, "summary:").ends_with("PASS"));
}

#[test]
fn grad_check_flags_low_sample_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = drca(dir.path(), &["grad-check", "--n", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(line_value(&stdout(&o), "summary:").contains("insufficient statistical power"));
}

#[test]
fn forward_writes_output_matching_head() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(drca(d, &["gen-video", "--seed", "5", "--out", "v.tnsr"]).status.success());
    let o = drca(d, &["forward", "--video", "v.tnsr", "--out", "o.tnsr"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_tnsr(d.join("o.tnsr")).unwrap().shape(), [10]);
    let text = stdout(&o);
    assert_eq!(line_value(&text, "selected:").split_whitespace().count(), 4);
    assert_eq!(line_value(&text, "scores:").split_whitespace().count(), 8);

    let o = drca(d, &["forward", "--video", "v.tnsr", "--out", "r.tnsr", "--set", "head=retrieval", "--set", "embed_out=24"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let norm: f64 = line_value(&stdout(&o), "embedding norm:").parse().unwrap();
    assert!((norm - 1.0).abs() <= 1e-5);
    let r = read_tnsr(d.join("r.tnsr")).unwrap();
    assert_eq!(r.shape(), [24]);
    assert!((r.norm() - 1.0).abs() <= 1e-5);
}

#[test]
fn forward_infer_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(drca(d, &["gen-video", "--seed", "5", "--out", "v.tnsr"]).status.success());
    for out in ["a.tnsr", "b.tnsr"] {
        assert!(drca(d, &["forward", "--video", "v.tnsr", "--out", out, "--mode", "infer"]).status.success());
    }
    assert_eq!(std::fs::read(d.join("a.tnsr")).unwrap(), std::fs::read(d.join("b.tnsr")).unwrap());
}

#[test]
fn forward_rejects_wrong_extent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(drca(d, &["gen-video", "--out", "v.tnsr", "--set", "frames=4", "--set", "saliency_count=2"]).status.success());
    let o = drca(d, &["forward", "--video", "v.tnsr", "--out", "o.tnsr"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[4, 64, 64, 3]") && err.contains("[8, 64, 64, 3]"), "{err}");
    assert!(!d.join("o.tnsr").exists());
}

#[test]
fn forward_uses_saved_params() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(drca(d, &["gen-video", "--out", "v.tnsr"]).status.success());
    assert!(drca(d, &["init-params", "--out-dir", "p", "--set", "seed=7"]).status.success());
    assert!(drca(d, &["forward", "--video", "v.tnsr", "--out", "a.tnsr", "--set", "seed=7"]).status.success());
    assert!(drca(d, &["forward", "--video", "v.tnsr", "--out", "b.tnsr", "--set", "params=p"]).status.success());
    assert_eq!(std::fs::read(d.join("a.tnsr")).unwrap(), std::fs::read(d.join("b.tnsr")).unwrap());
    let o = drca(d, &["forward", "--video", "v.tnsr", "--out", "c.tnsr", "--set", "params=p", "--set", "embed_dim=32"]);
    assert_eq!(o.status.code(), Some(2));
}

fn tsv_total(text: &str) -> (u64, u64) {
    let mut sum = 0;
    let mut total = None;
    for line in text.lines().filter(|l| !l.starts_with('#') && l.contains('\t')) {
        let f: Vec<&str> = line.split('\t').collect();
        let n: u64 = f[2].parse().unwrap();
        if f[0] == "total" {
            total = Some(n);
            break;
        }
        sum += n;
    }
    (sum, total.expect("total line"))
}

#[test]
fn flops_single_config_total_is_sum() {
    let dir = tempfile::tempdir().unwrap();
    let o = drca(dir.path(), &["flops", "--set", "variant=s"]);
    assert!(o.status.success());
    let (sum, total) = tsv_total(&stdout(&o));
    assert_eq!(sum, total);
}

#[test]
fn flops_compare_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s.cfg"), "variant = s\n").unwrap();
    std::fs::write(d.join("base.cfg"), "variant = s\npipeline = baseline\n").unwrap();
    std::fs::write(d.join("flat.cfg"), "variant = s\nsaliency_count = 8\ncompression = 1\n").unwrap();
    let ratio = |a: &str, b: &str| -> String {
        let o = drca(d, &["flops", a, b]);
        assert!(o.status.success(), "{}", stderr(&o));
        line_value(&stdout(&o), "ratio =").to_string()
    };
    let r: f64 = ratio("s.cfg", "base.cfg").parse().unwrap();
    assert!((0.58..=0.74).contains(&r), "{r}");
    assert_eq!(ratio("flat.cfg", "base.cfg"), "1.0000");
}

#[test]
fn flops_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "compression = 3\n").unwrap();
    assert_eq!(drca(d, &["flops", "bad.cfg"]).status.code(), Some(2));
    std::fs::write(d.join("typo.cfg"), "saliency_cont = 3\n").unwrap();
    let o = drca(d, &["flops", "typo.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("saliency_cont"));
    assert_eq!(drca(d, &["flops", "missing.cfg"]).status.code(), Some(2));
}

#[test]
fn toy_train_zero_steps_has_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = drca(d, &["toy-train", "--steps", "0", "--videos", "40", "--held-out", "10", "--trace", "t.csv", "--out-dir", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "step,loss,accuracy");
    assert!(lines[1].starts_with("0,"));
    assert!(d.join("p/manifest.txt").exists());
}

#[test]
fn toy_train_default_recipe_generalises() {
    let dir = tempfile::tempdir().unwrap();
    let o = drca(dir.path(), &["toy-train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = line_value(&text, "final held-out accuracy:").parse().unwrap();
    assert!(acc >= 0.9, "{text}");
    let csv = std::fs::read_to_string(dir.path().join("toy_trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 302);
}

#[test]
fn drca_seed_is_revealed_in_echo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(drca(d, &["gen-video", "--out", "v.tnsr"]).status.success());
    let run = |seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_drca"));
        c.args(["forward", "--video", "v.tnsr", "--out", out]).current_dir(d).env_remove("DRCA_SEED");
        if let Some(s) = seed {
            c.env("DRCA_SEED", s);
        }
        c.output().unwrap()
    };
    let plain = run(None, "a.tnsr");
    let seeded = run(Some("11"), "b.tnsr");
    assert!(stdout(&plain).contains("# seed = 0\n"));
    assert!(stdout(&seeded).contains("# seed = 11\n"));
    assert_ne!(std::fs::read(d.join("a.tnsr")).unwrap(), std::fs::read(d.join("b.tnsr")).unwrap());
    assert_eq!(run(Some("eleven"), "c.tnsr").status.code(), Some(2));
}

#[test]
fn selftest_lists_suites_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let o = drca(dir.path(), &["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for suite in ["numerics", "perturbed-ranking", "dccm", "rat", "model", "flops", "cli"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{suite}: "))), "{suite} missing:\n{text}");
    }
    let o = drca(dir.path(), &["selftest", "--corrupt-softmax"]);
    assert_ne!(o.status.code(), Some(0));
}
