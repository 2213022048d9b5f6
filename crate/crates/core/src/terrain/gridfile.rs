//! Text grid file for height fields.
//!
//! Layout:
//! ```text
//! heightfield v1
//! resolution <m/cell>
//! length <cells>
//! width <cells>
//! border <min_x> <min_y> <max_x> <max_y>
//! heights
//! <length rows of width space-separated values>
//! support
//! <length rows of width 0/1 flags>
//! end
//! ```
//! Floats use Rust's shortest round-trip formatting, so a written field reads
//! back bitwise identical.

use super::{Border, HeightField};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_grid_file(field: &HeightField, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("heightfield v1\n");
    let _ = writeln!(out, "resolution {}", field.resolution);
    let _ = writeln!(out, "length {}", field.length);
    let _ = writeln!(out, "width {}", field.width);
    let _ = writeln!(
        out,
        "border {} {} {} {}",
        field.border.min_x, field.border.min_y, field.border.max_x, field.border.max_y
    );
    out.push_str("heights\n");
    for row in field.heights.chunks(field.width) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    out.push_str("support\n");
    for row in field.support.chunks(field.width) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            out.push(if *v { '1' } else { '0' });
            first = false;
        }
        out.push('\n');
    }
    out.push_str("end\n");
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_grid_file(path: &Path) -> Result<HeightField> {
    let text = std::fs::read_to_string(path)?;
    parse_grid(&text).map_err(|msg| Error::config("grid_file", format!("{}: {msg}", path.display())))
}

fn parse_grid(text: &str) -> std::result::Result<HeightField, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header.trim() != "heightfield v1" {
        return Err(format!("unknown header `{header}`"));
    }
    let mut resolution = None;
    let mut length = None;
    let mut width = None;
    let mut border = None;
    loop {
        let line = lines.next().ok_or("missing heights section")?;
        let line = line.trim();
        if line == "heights" {
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().ok_or("blank line before heights")?;
        match key {
            "resolution" => {
                resolution = Some(
                    parts
                        .next()
                        .ok_or("resolution missing value")?
                        .parse::<f64>()
                        .map_err(|e| format!("resolution: {e}"))?,
                )
            }
            "length" => {
                length = Some(
                    parts
                        .next()
                        .ok_or("length missing value")?
                        .parse::<usize>()
                        .map_err(|e| format!("length: {e}"))?,
                )
            }
            "width" => {
                width = Some(
                    parts
                        .next()
                        .ok_or("width missing value")?
                        .parse::<usize>()
                        .map_err(|e| format!("width: {e}"))?,
                )
            }
            "border" => {
                let vals: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("border: {e}"))?;
                if vals.len() != 4 {
                    return Err("border needs 4 values".into());
                }
                border = Some(Border {
                    min_x: vals[0],
                    min_y: vals[1],
                    max_x: vals[2],
                    max_y: vals[3],
                });
            }
            other => return Err(format!("unknown key `{other}`")),
        }
    }
    let resolution = resolution.ok_or("missing resolution")?;
    let length = length.ok_or("missing length")?;
    let width = width.ok_or("missing width")?;
    let border = border.ok_or("missing border")?;

    let mut heights = Vec::with_capacity(length * width);
    for r in 0..length {
        let line = lines.next().ok_or_else(|| format!("missing height row {r}"))?;
        for tok in line.split_whitespace() {
            heights.push(tok.parse::<f64>().map_err(|e| format!("height row {r}: {e}"))?);
        }
    }
    if heights.len() != length * width {
        return Err(format!("expected {} heights, got {}", length * width, heights.len()));
    }
    let marker = lines.next().ok_or("missing support section")?;
    if marker.trim() != "support" {
        return Err(format!("expected `support`, got `{marker}`"));
    }
    let mut support = Vec::with_capacity(length * width);
    for r in 0..length {
        let line = lines.next().ok_or_else(|| format!("missing support row {r}"))?;
        for tok in line.split_whitespace() {
            match tok {
                "0" => support.push(false),
                "1" => support.push(true),
                other => return Err(format!("support row {r}: bad flag `{other}`")),
            }
        }
    }
    if support.len() != length * width {
        return Err(format!("expected {} support flags, got {}", length * width, support.len()));
    }
    match lines.next().map(str::trim) {
        Some("end") => {}
        other => return Err(format!("expected `end`, got {other:?}")),
    }
    Ok(HeightField {
        resolution,
        length,
        width,
        heights,
        support,
        border,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{generate, TerrainFamily, TerrainGenConfig, TerrainSpec};

    #[test]
    fn grid_file_round_trip_is_bitwise() {
        let spec = TerrainSpec::new(TerrainFamily::GridStones, 4, 11).unwrap();
        let field = generate(&spec, &TerrainGenConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tile.grid");
        write_grid_file(&field, &path).unwrap();
        let back = read_grid_file(&path).unwrap();
        assert_eq!(field, back);
        // a second write of the parsed field is byte-identical
        let path2 = dir.path().join("tile2.grid");
        write_grid_file(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(parse_grid("").is_err());
        assert!(parse_grid("heightfield v2\n").is_err());
        assert!(parse_grid("heightfield v1\nresolution 0.1\nheights\n").is_err());
    }
}
