//! Minimal binary portable-graymap (P5) reader/writer.

use crate::error::{Error, Result};
use std::io::Write as _;
use std::path::Path;

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape(
            "write_pgm",
            format!("{} pixels for {width}x{height}", pixels.len()),
        ));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let header_err = || Error::Eval(format!("{}: not a P5 graymap", path.display()));
    // P5\n<width> <height>\n255\n<data>
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err())?);
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(header_err());
    }
    let width: usize = fields[1].parse().map_err(|_| header_err())?;
    let height: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // the single whitespace after maxval
    let data = bytes[pos..].to_vec();
    if data.len() != width * height {
        return Err(Error::Eval(format!(
            "{}: {} data bytes for {width}x{height}",
            path.display(),
            data.len()
        )));
    }
    Ok((width, height, data))
}
