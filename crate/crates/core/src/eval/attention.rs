//! Attention-weight export: per-step frames of world-positioned scan points
//! with head-averaged weights, plus one grayscale image per frame.

use crate::encoder::EncoderConfig;
use crate::env::{ObservationBundle, RandomizationConfig, SimEnv};
use crate::error::{Error, Result};
use crate::heads::{act, ActorCriticWeights};
use crate::io::write_pgm;
use crate::tensor::Scalar;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Attention weights mapped onto world-frame scan points at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFrame {
    pub step: u64,
    pub length: usize,
    pub width: usize,
    /// World (x, y, z) per scan point, row-major.
    pub positions: Vec<[f64; 3]>,
    /// Head-averaged weight per point; nonnegative, sums to 1.
    pub weights: Vec<f64>,
    /// Per-head rows, present when exported with `per_head = true`.
    pub per_head: Option<Vec<Vec<f64>>>,
}

/// Roll the policy out deterministically and capture attention frames.
///
/// Only the primary encoder exposes point-wise attention; the ablation
/// encoders return an unsupported-feature error.
pub fn export_attention<T: Scalar>(
    weights: &ActorCriticWeights<T>,
    env: &mut SimEnv,
    enc_cfg: &EncoderConfig,
    rand_cfg: &RandomizationConfig,
    steps: usize,
    per_head: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AttentionFrame>> {
    if weights.encoder.kind() != crate::encoder::EncoderKind::Primary {
        return Err(Error::Unsupported(format!(
            "encoder `{}` has no point-wise attention to export",
            weights.encoder.kind().as_str()
        )));
    }
    let heads = enc_cfg.heads;
    let tokens = enc_cfg.tokens();
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        let obs: ObservationBundle = env.observe(enc_cfg, rand_cfg, false)?;
        let (action_t, _, attention) = act(&obs, weights, false, rng)?;
        let attention = attention.expect("primary encoder returns attention");

        // head-averaged weights over the L*W tokens
        let data = attention.data();
        let mut avg = vec![0.0f64; tokens];
        let mut heads_rows = Vec::with_capacity(heads);
        for h in 0..heads {
            let row: Vec<f64> = (0..tokens).map(|t| data[h * tokens + t].as_f64()).collect();
            for (a, v) in avg.iter_mut().zip(row.iter()) {
                *a += v / heads as f64;
            }
            heads_rows.push(row);
        }

        // robot-frame scan points to world frame
        let (s, c) = env.state.yaw.sin_cos();
        let base = env.state.base_pos;
        let positions: Vec<[f64; 3]> = obs
            .scan
            .points()
            .data()
            .chunks(3)
            .map(|p| {
                [
                    base[0] + p[0] * c - p[1] * s,
                    base[1] + p[0] * s + p[1] * c,
                    base[2] + p[2],
                ]
            })
            .collect();

        frames.push(AttentionFrame {
            step: env.state.step_count,
            length: enc_cfg.length,
            width: enc_cfg.width,
            positions,
            weights: avg,
            per_head: per_head.then_some(heads_rows),
        });

        let action: Vec<f64> = action_t.data().iter().map(|v| v.as_f64()).collect();
        let info = env.step(&action);
        if info.terminated || info.fault {
            break;
        }
    }
    Ok(frames)
}

/// Write frames as a documented text file plus one PGM image per frame.
pub fn write_attention_frames(frames: &[AttentionFrame], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    out.push_str("attention_frames v1\n");
    let _ = writeln!(out, "frames {}", frames.len());
    if let Some(f) = frames.first() {
        let _ = writeln!(
            out,
            "length {} width {} heads {}",
            f.length,
            f.width,
            f.per_head.as_ref().map_or(0, Vec::len)
        );
    } else {
        out.push_str("length 0 width 0 heads 0\n");
    }
    for (i, f) in frames.iter().enumerate() {
        let _ = writeln!(out, "frame {i} step {}", f.step);
        for (k, (p, w)) in f.positions.iter().zip(f.weights.iter()).enumerate() {
            let _ = write!(out, "{} {} {} {}", p[0], p[1], p[2], w);
            if let Some(heads) = &f.per_head {
                for row in heads {
                    let _ = write!(out, " {}", row[k]);
                }
            }
            out.push('\n');
        }
        out.push_str("end_frame\n");
    }
    out.push_str("end\n");
    std::fs::write(dir.join("frames.txt"), out)?;

    for (i, f) in frames.iter().enumerate() {
        let max = f.weights.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
        let pixels: Vec<u8> = f
            .weights
            .iter()
            .map(|w| ((w / max) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pgm(&dir.join(format!("frame_{i:04}.pgm")), f.width, f.length, &pixels)?;
    }
    Ok(())
}

/// Parse a frames file back; the inverse of [`write_attention_frames`].
pub fn read_attention_frames(path: &Path) -> Result<Vec<AttentionFrame>> {
    let text = std::fs::read_to_string(path)?;
    parse_frames(&text).map_err(|m| Error::Eval(format!("{}: {m}", path.display())))
}

fn parse_frames(text: &str) -> std::result::Result<Vec<AttentionFrame>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("attention_frames v1") {
        return Err("bad header".into());
    }
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("frames "))
        .ok_or("missing frames count")?
        .trim()
        .parse()
        .map_err(|e| format!("frames: {e}"))?;
    let dims = lines.next().ok_or("missing dims line")?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "length" || parts[2] != "width" || parts[4] != "heads" {
        return Err(format!("bad dims line `{dims}`"));
    }
    let length: usize = parts[1].parse().map_err(|e| format!("length: {e}"))?;
    let width: usize = parts[3].parse().map_err(|e| format!("width: {e}"))?;
    let heads: usize = parts[5].parse().map_err(|e| format!("heads: {e}"))?;

    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let head = lines.next().ok_or("missing frame header")?;
        let hp: Vec<&str> = head.split_whitespace().collect();
        if hp.len() != 4 || hp[0] != "frame" || hp[2] != "step" {
            return Err(format!("bad frame header `{head}`"));
        }
        let step: u64 = hp[3].parse().map_err(|e| format!("step: {e}"))?;
        let mut positions = Vec::with_capacity(length * width);
        let mut weights = Vec::with_capacity(length * width);
        let mut per_head: Vec<Vec<f64>> = vec![Vec::new(); heads];
        for line in lines.by_ref() {
            let line = line.trim_end();
            if line == "end_frame" {
                break;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("point: {e}"))?;
            if vals.len() != 4 + heads {
                return Err(format!("point row has {} values, expected {}", vals.len(), 4 + heads));
            }
            positions.push([vals[0], vals[1], vals[2]]);
            weights.push(vals[3]);
            for h in 0..heads {
                per_head[h].push(vals[4 + h]);
            }
        }
        frames.push(AttentionFrame {
            step,
            length,
            width,
            positions,
            weights,
            per_head: (heads > 0).then_some(per_head),
        });
    }
    Ok(frames)
}
