//! Command-line contract: exit codes, config rejection, and byte-identical
//! outputs under identical configuration and seed.

use std::path::{Path, PathBuf};
use std::process::Command;

use din_core::checkpoint;
use din_core::image_io;
use din_core::model::{DinModel, FusionMode, ModelConfig, Task};
use din_core::rng::Rng;
use din_core::tensor::Tensor;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_din")
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("din_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_images(dir: &Path, count: usize, hw: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let mut rng = Rng::seed_from(seed + i as u64);
        let mut data = Vec::with_capacity(3 * hw * hw);
        for c in 0..3 {
            for y in 0..hw {
                for x in 0..hw {
                    let v = 0.5
                        + 0.25 * ((x as f64) * 0.35 + (y as f64) * 0.21 + c as f64).sin()
                        + 0.1 * rng.uniform(-0.2, 0.2);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        let img = Tensor::<f64>::from_vec((1, 3, hw, hw), data).unwrap();
        image_io::write_image(&dir.join(format!("p{i}.png")), &img).unwrap();
    }
}

fn toy_config_text(out_dir: &Path, data_root: &Path) -> String {
    format!(
        r#"seed = 7
out_dir = "{}"
precision = "f32"

[model]
task = "sr"
scale = 2
branches = 2
wrdbs_per_branch = 1
rdbs_per_wrdb = 1
convs_per_rdb = 2
growth = 4
channels = 8

[degradation]
kind = "BI"
scale = 2
seed = 3

[optimizer]
lr = 1e-3

[data]
root = "{}"
patch_size = 12
batch_size = 2

[train]
steps = 12
checkpoint_every = 10
log_every = 0
"#,
        out_dir.display(),
        data_root.display()
    )
}

#[test]
fn unknown_config_keys_are_rejected_with_exit_1() {
    let dir = work_dir("badkey");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[model]\ntask = \"sr\"\nbananas = 4\n").unwrap();
    let out = Command::new(bin())
        .args(["params", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bananas"), "error should name the key: {err}");
}

#[test]
fn malformed_config_reports_line_and_exits_1() {
    let dir = work_dir("badsyntax");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[model\ntask = \"sr\"\n").unwrap();
    let out = Command::new(bin())
        .args(["params", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "error should carry a line: {err}");
}

#[test]
fn invalid_model_settings_exit_1() {
    let dir = work_dir("badmodel");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[model]\ntask = \"sr\"\nscale = 5\n").unwrap();
    let out = Command::new(bin())
        .args(["params", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_exits_2() {
    let dir = work_dir("nockpt");
    let out = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(dir.join("absent.ckpt"))
        .arg("--data")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_2() {
    let dir = work_dir("nodata");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, toy_config_text(&dir.join("run"), &dir.join("missing"))).unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_byte_identical_under_fixed_seed() {
    let dir = work_dir("train_det");
    write_images(&dir.join("data/hq"), 2, 28, 40);
    let run = |out_name: &str| -> (Vec<u8>, Vec<u8>) {
        let out_dir = dir.join(out_name);
        let cfg_path = dir.join(format!("{out_name}.toml"));
        std::fs::write(&cfg_path, toy_config_text(&out_dir, &dir.join("data"))).unwrap();
        let status = Command::new(bin())
            .args(["train", "--config"])
            .arg(&cfg_path)
            .status()
            .unwrap();
        assert!(status.success());
        (
            std::fs::read(out_dir.join("final.ckpt")).unwrap(),
            std::fs::read(out_dir.join("loss_curve.csv")).unwrap(),
        )
    };
    let (ckpt_a, curve_a) = run("a");
    let (ckpt_b, curve_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    assert_eq!(curve_a, curve_b, "loss curves differ between identical runs");
}

#[test]
fn eval_with_and_without_ensemble_agree_for_zero_tail_model() {
    let dir = work_dir("ensemble_agree");
    // Derain data: paired identical lq/hq images.
    write_images(&dir.join("data/hq"), 2, 24, 50);
    std::fs::create_dir_all(dir.join("data/lq")).unwrap();
    for i in 0..2 {
        std::fs::copy(
            dir.join(format!("data/hq/p{i}.png")),
            dir.join(format!("data/lq/p{i}.png")),
        )
        .unwrap();
    }
    // A derain model with the reconstruction conv zeroed: pure identity.
    let mut cfg = ModelConfig::for_task(Task::Derain);
    cfg.branches = 2;
    cfg.blocks_per_branch = 1;
    cfg.rdbs_per_block = 1;
    cfg.layers_per_rdb = 2;
    cfg.growth = 4;
    cfg.channels = 8;
    cfg.fusion = FusionMode::AsyCa;
    let (_model, store) = DinModel::<f32>::build(cfg, 3).unwrap();
    for name in ["tail.reconstruct.weight", "tail.reconstruct.bias"] {
        let p = store.get(name).unwrap();
        let shape = p.borrow().shape();
        *p.borrow_mut() = Tensor::zeros(shape).requires_grad();
    }
    let ckpt_path = dir.join("identity.ckpt");
    checkpoint::save(&ckpt_path, &cfg, &store).unwrap();

    let run = |ensemble: bool, out_name: &str| -> Vec<u8> {
        let mut cmd = Command::new(bin());
        cmd.args(["eval", "--checkpoint"])
            .arg(&ckpt_path)
            .arg("--data")
            .arg(dir.join("data"))
            .arg("--out")
            .arg(dir.join(out_name));
        if ensemble {
            cmd.arg("--ensemble");
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.join(out_name).join("metrics.csv")).unwrap()
    };
    let plain = run(false, "plain");
    let ensembled = run(true, "ens");
    assert_eq!(plain, ensembled, "metrics differ between plain and ensemble");
    // Identity on identical pairs: the capped PSNR and unit SSIM.
    let text = String::from_utf8(plain).unwrap();
    assert!(text.contains("99.0000"), "{text}");
    assert!(text.contains("1.000000"), "{text}");
}

#[test]
fn eval_reruns_are_byte_identical() {
    let dir = work_dir("eval_det");
    write_images(&dir.join("data/hq"), 2, 24, 60);
    let cfg = {
        let mut c = ModelConfig::sr(2);
        c.branches = 2;
        c.blocks_per_branch = 1;
        c.rdbs_per_block = 1;
        c.layers_per_rdb = 2;
        c.growth = 4;
        c.channels = 8;
        c
    };
    let (_m, store) = DinModel::<f32>::build(cfg, 9).unwrap();
    let ckpt_path = dir.join("m.ckpt");
    checkpoint::save(&ckpt_path, &cfg, &store).unwrap();
    let run = |out_name: &str| -> (Vec<u8>, Vec<u8>) {
        let out = Command::new(bin())
            .args(["eval", "--checkpoint"])
            .arg(&ckpt_path)
            .arg("--data")
            .arg(dir.join("data"))
            .arg("--out")
            .arg(dir.join(out_name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(dir.join(out_name).join("metrics.csv")).unwrap(),
            std::fs::read(dir.join(out_name).join("p0.png")).unwrap(),
        )
    };
    let a = run("r1");
    let b = run("r2");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn flops_formula_spot_check() {
    // depthwise term: C*H*W for a 64-channel 64x64 map.
    let dir = work_dir("flops");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(
        &cfg_path,
        "[model]\ntask = \"sr\"\nscale = 2\nbranches = 1\nwrdbs_per_branch = 1\nrdbs_per_wrdb = 1\nconvs_per_rdb = 1\ngrowth = 4\nchannels = 8\n",
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["flops", "--config"])
        .arg(&cfg_path)
        .args(["--hw", "16", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("mult-adds"), "{text}");
}

#[test]
fn deblur_round_trip_with_equal_size_pairs() {
    // Deblur pairs have equal dims; the internal 4x resampling must not
    // leak into the dataset contract.
    let dir = work_dir("deblur_pairs");
    write_images(&dir.join("data/hq"), 2, 24, 70);
    std::fs::create_dir_all(dir.join("data/lq")).unwrap();
    for i in 0..2 {
        std::fs::copy(
            dir.join(format!("data/hq/p{i}.png")),
            dir.join(format!("data/lq/p{i}.png")),
        )
        .unwrap();
    }
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(
        &cfg_path,
        format!(
            r#"seed = 3
out_dir = "{}"

[model]
task = "deblur"
branches = 2
wrdbs_per_branch = 1
rdbs_per_wrdb = 1
convs_per_rdb = 2
growth = 4
channels = 8

[optimizer]
lr = 1e-3

[data]
root = "{}"
patch_size = 16
batch_size = 2

[train]
steps = 4
checkpoint_every = 0
log_every = 0
"#,
            dir.join("run").display(),
            dir.join("data").display()
        ),
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(dir.join("run/final.ckpt"))
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("eval"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_aborts_with_exit_3_and_keeps_last_checkpoint() {
    let dir = work_dir("diverge");
    write_images(&dir.join("data/hq"), 2, 28, 80);
    let cfg_path = dir.join("cfg.toml");
    // An absurd learning rate blows the parameters up after one step; the
    // next forward goes non-finite.
    std::fs::write(
        &cfg_path,
        format!(
            r#"seed = 3
out_dir = "{}"

[model]
task = "sr"
scale = 2
branches = 1
wrdbs_per_branch = 1
rdbs_per_wrdb = 1
convs_per_rdb = 2
growth = 4
channels = 8

[degradation]
kind = "BI"
scale = 2

[optimizer]
lr = 1e18
lr_decay_steps = 0

[data]
root = "{}"
patch_size = 12
batch_size = 2

[train]
steps = 50
checkpoint_every = 1
log_every = 0
"#,
            dir.join("run").display(),
            dir.join("data").display()
        ),
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // At least one periodic checkpoint from before the failure survives.
    let kept = std::fs::read_dir(dir.join("run"))
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().ends_with(".ckpt"));
    assert!(kept, "no checkpoint retained after divergence");
}

#[test]
fn f64_precision_trains_and_evaluates() {
    let dir = work_dir("f64run");
    write_images(&dir.join("data/hq"), 2, 24, 90);
    let cfg_path = dir.join("cfg.toml");
    let mut text = toy_config_text(&dir.join("run"), &dir.join("data"));
    text = text.replace("precision = \"f32\"", "precision = \"f64\"");
    text = text.replace("steps = 12", "steps = 3");
    std::fs::write(&cfg_path, text).unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(dir.join("run/final.ckpt"))
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("eval"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn params_command_prints_the_full_model_count() {
    let dir = work_dir("params_full");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, "[model]\ntask = \"sr\"\nscale = 2\n").unwrap();
    let out = Command::new(bin())
        .args(["params", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("parameters: 19250547"), "{text}");
}
