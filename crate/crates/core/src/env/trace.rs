//! Row-per-step episode trace, exportable as tab-separated text.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One recorded control step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub step: u64,
    pub base: [f64; 3],
    pub yaw: f64,
    pub lin_vel: [f64; 2],
    pub command: [f64; 3],
    pub reward_total: f64,
    /// Weighted contributions, aligned with the trace's `term_names`.
    pub reward_terms: Vec<f64>,
    pub terminated: bool,
    pub collided: bool,
    pub zero_contact: bool,
    pub walked_out: bool,
}

/// A complete episode: every step from reset to its end.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub term_names: Vec<String>,
    pub steps: Vec<TraceStep>,
    /// Steps after which the episode times out.
    pub timeout_steps: u64,
    /// False when recording stopped before the episode ended.
    pub complete: bool,
}

impl EpisodeTrace {
    pub fn new(term_names: Vec<String>, timeout_steps: u64) -> Self {
        EpisodeTrace {
            term_names,
            steps: Vec::new(),
            timeout_steps,
            complete: false,
        }
    }
}

pub fn write_trace(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("episode_trace v1\n");
    let _ = writeln!(out, "timeout_steps {}", trace.timeout_steps);
    let _ = writeln!(out, "complete {}", u8::from(trace.complete));
    out.push_str("columns step base_x base_y base_z yaw vx vy cmd_vx cmd_vy cmd_wz reward_total terminated collided zero_contact walked_out");
    for name in &trace.term_names {
        let _ = write!(out, " r_{name}");
    }
    out.push('\n');
    for s in &trace.steps {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.step,
            s.base[0],
            s.base[1],
            s.base[2],
            s.yaw,
            s.lin_vel[0],
            s.lin_vel[1],
            s.command[0],
            s.command[1],
            s.command[2],
            s.reward_total,
            u8::from(s.terminated),
            u8::from(s.collided),
            u8::from(s.zero_contact),
            u8::from(s.walked_out),
        );
        for v in &s.reward_terms {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out.push_str("end\n");
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<EpisodeTrace> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text).map_err(|m| Error::Eval(format!("{}: {m}", path.display())))
}

fn parse_trace(text: &str) -> std::result::Result<EpisodeTrace, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("episode_trace v1") {
        return Err("bad header".into());
    }
    let timeout_steps: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("timeout_steps "))
        .ok_or("missing timeout_steps")?
        .trim()
        .parse()
        .map_err(|e| format!("timeout_steps: {e}"))?;
    let complete = match lines
        .next()
        .and_then(|l| l.strip_prefix("complete "))
        .map(str::trim)
    {
        Some("1") => true,
        Some("0") => false,
        other => return Err(format!("complete: bad value {other:?}")),
    };
    let columns = lines.next().and_then(|l| l.strip_prefix("columns ")).ok_or("missing columns")?;
    let term_names: Vec<String> = columns
        .split_whitespace()
        .filter_map(|c| c.strip_prefix("r_").map(str::to_string))
        .collect();

    let mut steps = Vec::new();
    for line in lines {
        let line = line.trim_end();
        if line == "end" {
            return Ok(EpisodeTrace {
                term_names,
                steps,
                timeout_steps,
                complete,
            });
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 15 + term_names.len() {
            return Err(format!("row has {} fields, expected {}", f.len(), 15 + term_names.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            f[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"))
        };
        let flag = |i: usize| -> std::result::Result<bool, String> {
            match f[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format!("field {i}: bad flag `{other}`")),
            }
        };
        let mut terms = Vec::with_capacity(term_names.len());
        for k in 0..term_names.len() {
            terms.push(num(15 + k)?);
        }
        steps.push(TraceStep {
            reward_terms: terms,
            step: f[0].parse().map_err(|e| format!("step: {e}"))?,
            base: [num(1)?, num(2)?, num(3)?],
            yaw: num(4)?,
            lin_vel: [num(5)?, num(6)?],
            command: [num(7)?, num(8)?, num(9)?],
            reward_total: num(10)?,
            terminated: flag(11)?,
            collided: flag(12)?,
            zero_contact: flag(13)?,
            walked_out: flag(14)?,
        });
    }
    Err("missing end marker".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let mut t = EpisodeTrace::new(vec!["lin_vel_tracking".into(), "termination".into()], 1000);
        t.complete = true;
        t.steps.push(TraceStep {
            step: 0,
            base: [0.1, -0.2, 0.5],
            yaw: 0.3,
            lin_vel: [0.5, 0.0],
            command: [0.6, 0.0, 0.0],
            reward_total: 4.25,
            reward_terms: vec![4.25, 0.0],
            terminated: false,
            collided: false,
            zero_contact: false,
            walked_out: false,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.trace");
        write_trace(&t, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn truncated_trace_is_rejected() {
        assert!(parse_trace("episode_trace v1\ntimeout_steps 10\ncomplete 1\ncolumns step base_x base_y base_z yaw vx vy cmd_vx cmd_vy cmd_wz reward_total terminated collided zero_contact walked_out\n").is_err());
    }
}
