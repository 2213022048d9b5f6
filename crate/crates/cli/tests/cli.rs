//! End-to-end tests of the command-line interface, driving the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_attnloco")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("ATTNLOCO_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, seed: u64, encoder: &str) -> PathBuf {
    let text = format!(
        r#"
[run]
robot = "quadruped"
encoder = "{encoder}"
master_seed = {seed}
out_dir = "{out}"

[encoder]
length = 12
width = 11
dim = 8
heads = 2

[policy]
hidden = 16

[ppo]
env_count = 6
steps_per_env = 12
num_minibatches = 3

[env]
episode_seconds = 2.0

[stage1]
epochs = 10
fixed_level = 0
families = ["rough", "grid_stones"]

[stage2]
epochs = 3
"#,
        out = dir.join("out").display(),
    );
    let path = dir.join(format!("cfg_{encoder}_{seed}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn stage_two_without_resume_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0, "primary");
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "2"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resume"));
}

#[test]
fn smoke_run_writes_one_log_record_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1, "primary");
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("out/stage1.log")).unwrap();
    assert_eq!(log.lines().count(), 10);
    assert!(dir.path().join("out/stage1_final.ckpt").exists());
}

#[test]
fn identical_seed_and_config_reproduce_logs_and_checkpoints_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2, "primary");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let st = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--stage",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    }
    let log_a = std::fs::read(out_a.join("stage1.log")).unwrap();
    let log_b = std::fs::read(out_b.join("stage1.log")).unwrap();
    assert_eq!(log_a, log_b, "training logs must be bitwise identical");
    let ck_a = std::fs::read(out_a.join("stage1_final.ckpt")).unwrap();
    let ck_b = std::fs::read(out_b.join("stage1_final.ckpt")).unwrap();
    assert_eq!(ck_a, ck_b, "checkpoints must be bitwise identical");
}

#[test]
fn stage_two_preserves_stage_one_encoder_weights_exactly() {
    use attnloco_core::io::read_checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3, "primary");
    let s1 = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert!(s1.status.success());
    let ckpt1 = dir.path().join("out/stage1_final.ckpt");

    // the stage-2 run must start from exactly the stage-1 weights; capture
    // them by loading the checkpoint directly
    let before = read_checkpoint(&ckpt1).unwrap();

    let s2 = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--stage",
        "2",
        "--resume",
        ckpt1.to_str().unwrap(),
    ]);
    assert!(s2.status.success(), "stderr: {}", String::from_utf8_lossy(&s2.stderr));

    // a zero-epoch replication: rebuild stage-2 initial weights the same way
    // the binary does and compare encoder tensors to the stage-1 checkpoint
    let cfg_parsed = attnloco_core::io::RunConfig::parse(&before.config_text).unwrap();
    let mut weights: attnloco_core::heads::ActorCriticWeights<f32> =
        cfg_parsed.init_weights().unwrap();
    before.load_weights_into(&mut weights).unwrap();
    for (name, tensor) in weights.named_tensors() {
        if name.starts_with("encoder.") {
            let rec = before.tensor(&name).unwrap();
            let stored: attnloco_core::tensor::Tensor<f32> = rec.to_tensor().unwrap();
            assert_eq!(&stored, tensor, "{name} must match bitwise");
        }
    }
}

#[test]
fn eval_writes_deterministic_rate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 4, "primary");
    let st = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert!(st.status.success());
    let ckpt = dir.path().join("out/stage1_final.ckpt");
    let t1 = dir.path().join("t1.txt");
    let t2 = dir.path().join("t2.txt");
    for t in [&t1, &t2] {
        let out = run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--terrains",
            "rough,gaps,beams",
            "--episodes",
            "2",
            "--level",
            "1",
            "--seed",
            "9",
            "--out",
            t.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read_to_string(&t1).unwrap();
    let b = std::fs::read_to_string(&t2).unwrap();
    assert_eq!(a, b);
    // one row per family between the header and the end marker
    assert_eq!(a.lines().count(), 2 + 3 + 1);
}

#[test]
fn corrupt_checkpoint_fails_with_checksum_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5, "primary");
    let st = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert!(st.status.success());
    let ckpt = dir.path().join("out/stage1_final.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x55;
    std::fs::write(&ckpt, &bytes).unwrap();
    let out = run(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn attn_exports_frames_for_primary_and_rejects_ablations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 6, "primary");
    let st = run(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert!(st.status.success());
    let ckpt = dir.path().join("out/stage1_final.ckpt");
    let frames_dir = dir.path().join("frames");
    let out = run(&[
        "attn",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--family",
        "rough",
        "--steps",
        "5",
        "--out",
        frames_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(frames_dir.join("frames.txt").exists());
    assert!(frames_dir.join("frame_0000.pgm").exists());

    // an ablation-encoder checkpoint cannot export attention
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = tiny_config(dir2.path(), 7, "cnn-downsample");
    let st = run(&["train", "--config", cfg2.to_str().unwrap(), "--stage", "1"]);
    assert!(st.status.success(), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    let ckpt2 = dir2.path().join("out/stage1_final.ckpt");
    let out = run(&[
        "attn",
        "--checkpoint",
        ckpt2.to_str().unwrap(),
        "--family",
        "rough",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("attention"));
}

#[test]
fn terrain_preview_and_grad_check_run() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("tile.pgm");
    let grid = dir.path().join("tile.grid");
    let out = run(&[
        "terrain-preview",
        "--family",
        "grid_stones",
        "--level",
        "9",
        "--seed",
        "3",
        "--out",
        img.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(img.exists() && grid.exists());

    let out = run(&["terrain-preview", "--family", "volcano", "--out", img.to_str().unwrap()]);
    assert!(!out.status.success());

    let out = run(&["grad-check", "--seed", "1"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn out_dir_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8, "primary");
    let env_out = dir.path().join("env_out");
    let out = Command::new(bin())
        .args(["train", "--config", cfg.to_str().unwrap(), "--stage", "1"])
        .env("ATTNLOCO_OUT_DIR", env_out.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(env_out.join("stage1.log").exists());
}
