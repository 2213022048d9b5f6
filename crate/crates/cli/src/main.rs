//! Command-line entry points: training, evaluation, attention export,
//! terrain preview and the gradient-verification suite.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use attnloco_core::encoder::EncoderKind;
use attnloco_core::eval::{evaluate_suite, export_attention, write_attention_frames, EvalPolicy};
use attnloco_core::heads::ActorCriticWeights;
use attnloco_core::io::{read_checkpoint, write_checkpoint, write_pgm, Checkpoint, RunConfig};
use attnloco_core::ppo::Trainer;
use attnloco_core::terrain::{generate, write_grid_file, CurriculumState, TerrainFamily, TerrainSpec};

/// Environment variable overriding the configured output directory.
const OUT_DIR_ENV: &str = "ATTNLOCO_OUT_DIR";

#[derive(Parser)]
#[command(name = "attnloco", version, about = "Attention-based map-encoding locomotion trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one training stage from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training stage: 1 (privileged, base terrains) or 2 (noisy, all terrains).
        #[arg(long)]
        stage: u8,
        /// Checkpoint to resume from; required for stage 2.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over terrain families and write a rate table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// base | finetune | all | comma-separated family names
        #[arg(long, default_value = "base")]
        terrains: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 4)]
        level: u8,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the table here as well as to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the policy with uniform random actions (baseline).
        #[arg(long, default_value_t = false)]
        random_policy: bool,
    },
    /// Roll out deterministically and export attention frames.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 0)]
        level: u8,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export per-head weights.
        #[arg(long, default_value_t = false)]
        per_head: bool,
    },
    /// Render a terrain tile to a grayscale image.
    TerrainPreview {
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 0)]
        level: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also export the tile as a text grid file.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Run the gradient verification suite.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.to_string().starts_with("usage:") {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, stage, resume, seed, out } => {
            train(&config, stage, resume.as_deref(), seed, out)
        }
        Cmd::Eval { checkpoint, terrains, episodes, level, seed, out, random_policy } => {
            eval(&checkpoint, &terrains, episodes, level, seed, out.as_deref(), random_policy)
        }
        Cmd::Attn { checkpoint, family, level, steps, seed, out, per_head } => {
            attn(&checkpoint, &family, level, steps, seed, out, per_head)
        }
        Cmd::TerrainPreview { family, level, seed, out, grid } => {
            terrain_preview(&family, level, seed, &out, grid.as_deref())
        }
        Cmd::GradCheck { seed } => grad_check_suite(seed),
    }
}

fn out_dir(cfg: &RunConfig, cli_out: Option<PathBuf>) -> PathBuf {
    if let Some(p) = cli_out {
        return p;
    }
    if let Ok(p) = std::env::var(OUT_DIR_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    PathBuf::from(&cfg.run.out_dir)
}

fn train(
    config_path: &Path,
    stage: u8,
    resume: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    if !(stage == 1 || stage == 2) {
        bail!("usage: --stage must be 1 or 2");
    }
    if stage == 2 && resume.is_none() {
        bail!("usage: stage 2 fine-tunes a stage-1 checkpoint; pass --resume <checkpoint>");
    }
    let mut cfg = RunConfig::from_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(s) = seed {
        cfg.run.master_seed = s;
        cfg.validate()?;
    }
    let dir = out_dir(&cfg, out);
    std::fs::create_dir_all(&dir)?;
    let config_text = cfg.canonical_text();

    // training runs in 32-bit mode
    let mut weights: ActorCriticWeights<f32> = cfg.init_weights()?;
    let mut restore_full: Option<Checkpoint> = None;
    if let Some(path) = resume {
        let ckpt = read_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        if ckpt.stage == stage {
            // same-stage resume: restore everything after the trainer exists
            restore_full = Some(ckpt);
        } else {
            // stage-2 initialization from the stage-1 result: weights only
            ckpt.load_weights_into(&mut weights)?;
        }
    }

    let plan = cfg.stage_plan(stage)?;
    let checkpoint_every = plan.checkpoint_every;
    let mut trainer = Trainer::new(
        weights,
        cfg.robot_model(),
        cfg.ppo.clone(),
        cfg.env.clone(),
        cfg.terrain.clone(),
        cfg.randomization.clone(),
        cfg.reward_weights()?,
        plan,
        cfg.run.master_seed,
    )?;
    if let Some(ckpt) = restore_full {
        ckpt.restore_trainer(&mut trainer)?;
    }

    let log_path = dir.join(format!("stage{stage}.log"));
    let mut log = std::fs::File::create(&log_path)?;
    use std::io::Write as _;

    let total = trainer.plan.epochs;
    while trainer.epoch < total {
        let record = trainer.run_epoch()?;
        writeln!(log, "{}", record.to_line())?;
        log.flush()?;
        if checkpoint_every > 0 && record.epoch % checkpoint_every == 0 && record.epoch > 0 {
            let path = dir.join(format!("stage{stage}_epoch{:06}.ckpt", record.epoch));
            write_checkpoint(&path, &Checkpoint::from_trainer(&trainer, &config_text))?;
        }
        println!("{}", record.to_line());
    }
    let final_path = dir.join(format!("stage{stage}_final.ckpt"));
    write_checkpoint(&final_path, &Checkpoint::from_trainer(&trainer, &config_text))?;
    println!(
        "stage {stage} finished after {total} epochs; checkpoint {}",
        final_path.display()
    );
    Ok(())
}

fn families_from_arg(arg: &str, cfg: &RunConfig) -> Result<Vec<TerrainFamily>> {
    let profile = cfg.run.robot;
    Ok(match arg {
        "base" => TerrainFamily::base_set(profile).to_vec(),
        "finetune" => TerrainFamily::finetune_set(profile).to_vec(),
        "all" => {
            let mut v = TerrainFamily::base_set(profile).to_vec();
            v.extend_from_slice(TerrainFamily::finetune_set(profile));
            v
        }
        list => list
            .split(',')
            .map(|n| TerrainFamily::parse(n.trim()).map_err(|e| anyhow!(e)))
            .collect::<Result<Vec<_>>>()?,
    })
}

fn load_weights(ckpt: &Checkpoint) -> Result<(RunConfig, ActorCriticWeights<f32>)> {
    let cfg = RunConfig::parse(&ckpt.config_text).context("config snapshot in checkpoint")?;
    let mut weights: ActorCriticWeights<f32> = cfg.init_weights()?;
    ckpt.load_weights_into(&mut weights)?;
    Ok((cfg, weights))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    checkpoint: &Path,
    terrains: &str,
    episodes: usize,
    level: u8,
    seed: Option<u64>,
    out: Option<&Path>,
    random_policy: bool,
) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let (cfg, weights) = load_weights(&ckpt)?;
    let families = families_from_arg(terrains, &cfg)?;
    let seed = seed.unwrap_or(cfg.run.master_seed);
    let model = cfg.robot_model();
    let policy = if random_policy {
        EvalPolicy::Random
    } else {
        EvalPolicy::Trained(&weights)
    };
    let table = evaluate_suite(
        &policy,
        &model,
        &cfg.encoder_config(),
        &cfg.env,
        &cfg.terrain,
        &cfg.randomization,
        &cfg.reward_weights()?,
        &families,
        level,
        episodes,
        seed,
    )?;
    let text = table.to_text();
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, &text)?;
    }
    Ok(())
}

fn attn(
    checkpoint: &Path,
    family: &str,
    level: u8,
    steps: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
    per_head: bool,
) -> Result<()> {
    use attnloco_core::env::SimEnv;
    use rand::SeedableRng;

    let ckpt = read_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let (cfg, weights) = load_weights(&ckpt)?;
    if weights.encoder.kind() != EncoderKind::Primary {
        bail!(
            "encoder `{}` does not expose point-wise attention; only the primary encoder supports export",
            weights.encoder.kind().as_str()
        );
    }
    let family = TerrainFamily::parse(family)?;
    let seed = seed.unwrap_or(cfg.run.master_seed);
    let dir = out.unwrap_or_else(|| out_dir(&cfg, None).join("attention"));

    let model = cfg.robot_model();
    let mut env = SimEnv::new(model, cfg.env.clone(), cfg.terrain.clone(), seed)?;
    let cur = CurriculumState::new(family, level, seed);
    env.reset(&cur, &cfg.randomization)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xA77E);
    let frames = export_attention(
        &weights,
        &mut env,
        &cfg.encoder_config(),
        &cfg.randomization,
        steps,
        per_head,
        &mut rng,
    )?;
    write_attention_frames(&frames, &dir)?;
    println!("wrote {} attention frames to {}", frames.len(), dir.display());
    Ok(())
}

fn terrain_preview(family: &str, level: u8, seed: u64, out: &Path, grid: Option<&Path>) -> Result<()> {
    let family = TerrainFamily::parse(family)?;
    let spec = TerrainSpec::new(family, level, seed)?;
    let field = generate(&spec, &attnloco_core::terrain::TerrainGenConfig::default())?;
    // grayscale: darkest = void, otherwise height normalized over the tile
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (h, s) in field.heights.iter().zip(field.support.iter()) {
        if *s {
            lo = lo.min(*h);
            hi = hi.max(*h);
        }
    }
    let span = (hi - lo).max(1e-9);
    let pixels: Vec<u8> = field
        .heights
        .iter()
        .zip(field.support.iter())
        .map(|(h, s)| {
            if *s {
                (40.0 + (h - lo) / span * 215.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    write_pgm(out, field.width, field.length, &pixels)?;
    if let Some(grid_path) = grid {
        write_grid_file(&field, grid_path)?;
    }
    println!(
        "{} level {level} seed {seed}: {}x{} cells -> {}",
        family.as_str(),
        field.length,
        field.width,
        out.display()
    );
    Ok(())
}

fn grad_check_suite(seed: u64) -> Result<()> {
    use attnloco_core::encoder::{encode_vars, EncoderConfig, EncoderWeights, MapScan};
    use attnloco_core::tensor::{grad_check, grad_check_multi, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_elementary = 0.0f64;

    // elementary operations
    for _ in 0..20 {
        let shape = [3usize, 4];
        let n: usize = shape.iter().product();
        let x = Tensor::<f64>::from_f64_slice(
            &shape,
            &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
        )?;
        let y = Tensor::<f64>::from_f64_slice(
            &shape,
            &(0..n).map(|_| rng.gen_range(0.5..1.5)).collect::<Vec<_>>(),
        )?;
        for err in [
            grad_check(|g, v| Ok(g.sum_all(g.mul(v, v)?)), &x, 1e-5)?,
            grad_check(|g, v| Ok(g.sum_all(g.exp(v))), &x, 1e-5)?,
            grad_check(|g, v| Ok(g.sum_all(g.tanh(v))), &x, 1e-5)?,
            grad_check(|g, v| Ok(g.sum_all(g.elu(v))), &x, 1e-5)?,
            grad_check(|g, v| Ok(g.mean_all(g.softmax(v, 1)?)), &x, 1e-5)?,
            grad_check_multi(|g, v| Ok(g.sum_all(g.div(v[0], v[1])?)), &[x.clone(), y.clone()], 1e-5)?,
        ] {
            worst_elementary = worst_elementary.max(err);
        }
    }
    println!("elementary ops: worst relative error {worst_elementary:.3e} (required < 1e-6)");

    // full encoder forward
    let cfg = EncoderConfig {
        length: 4,
        width: 3,
        dim: 8,
        heads: 2,
        query_len: 1,
        proprio_dim: 6,
        scan_resolution: 0.1,
    };
    let w = EncoderWeights::<f64>::init(&mut rng, &cfg);
    let z: Vec<f64> = (0..cfg.tokens()).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let scan = MapScan::from_z_grid(&cfg, &z)?;
    let proprio = Tensor::<f64>::from_f64_slice(
        &[1, 6],
        &(0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
    )?;
    let tensors: Vec<Tensor<f64>> = w.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let cfg2 = cfg.clone();
    let encoder_err = grad_check_multi(
        move |g, vars| {
            let wv = attnloco_core::encoder::EncoderWeightVars {
                conv1: attnloco_core::encoder::ConvVars { kernels: vars[0], bias: vars[1] },
                conv2: attnloco_core::encoder::ConvVars { kernels: vars[2], bias: vars[3] },
                proprio: attnloco_core::nn::LinearVars { weight: vars[4], bias: vars[5] },
                wq: vars[6],
                wk: vars[7],
                wv: vars[8],
                wo: vars[9],
            };
            let out = encode_vars(g, &scan, &proprio, &wv, &cfg2)?;
            Ok(g.sum_all(g.mul(out.encoding, out.encoding)?))
        },
        &tensors,
        1e-5,
    )?;
    println!("encoder forward: worst relative error {encoder_err:.3e} (required < 1e-4)");

    if worst_elementary < 1e-6 && encoder_err < 1e-4 {
        println!("grad-check: PASS");
        Ok(())
    } else {
        bail!("grad-check: FAIL")
    }
}
