//! Binary design files: portable graymap (`P2` written, `P2`/`P5` read) and row-per-line
//! CSV of 0/1 values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fdg::BinaryDesign;

/// Largest pixel count accepted by the parsers.
pub const MAX_PIXELS: usize = 1 << 24;

pub fn write_pgm(design: &BinaryDesign) -> String {
    let mut out = format!("P2\n{} {}\n1\n", design.cols(), design.rows());
    for row in design.pixels().chunks(design.cols()) {
        let line: Vec<&str> = row.iter().map(|&p| if p == 1 { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(Error::parse(format!("PGM: bad {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(s.parse().expect("short digit run"))
    }
}

fn to_bit(value: usize, maxval: usize) -> Result<u8> {
    match value {
        0 => Ok(0),
        v if v == maxval => Ok(1),
        v => Err(Error::parse(format!("PGM: pixel value {v} is neither 0 nor maxval {maxval}"))),
    }
}

/// Parses a binary design from a plain (`P2`) or raw (`P5`) graymap. Pixels must be 0
/// (void) or maxval (solid).
pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryDesign> {
    let magic = bytes.get(..2).ok_or_else(|| Error::parse("PGM: missing magic number"))?;
    let raw = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(Error::parse("PGM: expected P2 or P5")),
    };
    let mut h = Header { bytes, pos: 2 };
    let cols = h.number("width")?;
    let rows = h.number("height")?;
    let maxval = h.number("maxval")?;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > MAX_PIXELS {
        return Err(Error::parse(format!("PGM: unsupported size {cols}x{rows}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse("PGM: maxval must lie in 1..=65535"));
    }
    let n = rows * cols;
    let mut pixels = Vec::with_capacity(n);
    if raw {
        match bytes.get(h.pos) {
            Some(b' ' | b'\t' | b'\r' | b'\n') => h.pos += 1,
            _ => return Err(Error::parse("PGM: missing separator before raster")),
        }
        let width = if maxval < 256 { 1 } else { 2 };
        let data = &bytes[h.pos..];
        if data.len() < n * width {
            return Err(Error::parse("PGM: truncated raster"));
        }
        for k in 0..n {
            let v = if width == 1 {
                data[k] as usize
            } else {
                u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as usize
            };
            pixels.push(to_bit(v, maxval)?);
        }
    } else {
        for _ in 0..n {
            let v = h.number("pixel")?;
            pixels.push(to_bit(v, maxval)?);
        }
        h.skip_space_and_comments();
        if h.pos != bytes.len() {
            return Err(Error::parse("PGM: trailing data after raster"));
        }
    }
    BinaryDesign::new(rows, cols, pixels)
}

pub fn write_design_csv(design: &BinaryDesign) -> String {
    let mut out = String::with_capacity(design.len() * 2);
    for row in design.pixels().chunks(design.cols()) {
        let line: Vec<&str> = row.iter().map(|&p| if p == 1 { "1" } else { "0" }).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses one grid row per line of comma-separated 0/1 values. Blank lines are ignored.
pub fn parse_design_csv(text: &str) -> Result<BinaryDesign> {
    let mut cols = None;
    let mut pixels = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = pixels.len();
        for cell in line.split(',') {
            pixels.push(match cell.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(format!("CSV line {}: bad cell {other:?}", lineno + 1))),
            });
            if pixels.len() > MAX_PIXELS {
                return Err(Error::parse("CSV: design too large"));
            }
        }
        let width = pixels.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::parse(format!("CSV line {}: {width} cells, expected {c}", lineno + 1)))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse("CSV: empty design"))?;
    BinaryDesign::new(rows, cols, pixels)
}

/// Reads a design, choosing the format by extension (`.csv`) or the PGM magic number.
pub fn read_design(path: &Path) -> Result<BinaryDesign> {
    let bytes = std::fs::read(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse("CSV: not UTF-8"))?;
        parse_design_csv(text)
    } else {
        parse_pgm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BinaryDesign {
        BinaryDesign::new(2, 3, vec![1, 0, 0, 1, 1, 0]).unwrap()
    }

    #[test]
    fn pgm_round_trip() {
        let text = write_pgm(&sample());
        assert_eq!(text, "P2\n3 2\n1\n1 0 0\n1 1 0\n");
        assert_eq!(parse_pgm(text.as_bytes()).unwrap(), sample());
    }

    #[test]
    fn pgm_variants() {
        assert_eq!(parse_pgm(b"P2 # c\n3 2\n# x\n255\n255 0 0 255 255 0").unwrap(), sample());
        let mut raw = b"P5\n3 2\n1\n".to_vec();
        raw.extend([1, 0, 0, 1, 1, 0]);
        assert_eq!(parse_pgm(&raw).unwrap(), sample());
        assert!(parse_pgm(b"P2\n3 2\n1\n1 0 0 1 1").is_err());
        assert!(parse_pgm(b"P2\n3 2\n2\n1 0 0 1 1 0").is_err());
        assert!(parse_pgm(b"P3\n1 1\n1\n0").is_err());
        assert!(parse_pgm(b"P5\n3 2\n1\n\x01").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = write_design_csv(&sample());
        assert_eq!(text, "1,0,0\n1,1,0\n");
        assert_eq!(parse_design_csv(&text).unwrap(), sample());
        assert_eq!(parse_design_csv(" 1, 0,0\r\n\n1,1,0\n\n").unwrap(), sample());
        assert!(parse_design_csv("1,0\n1\n").is_err());
        assert!(parse_design_csv("1,2\n").is_err());
        assert!(parse_design_csv("\n").is_err());
    }
}
