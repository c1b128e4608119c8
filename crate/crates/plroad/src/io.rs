//! Netpbm/PFM readers and writers. Byte-exact round trips: the dataset
//! determinism contract hashes these files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed at byte {offset}: {msg}")]
    Malformed { path: String, offset: usize, msg: String },
}

type Result<T> = std::result::Result<T, ImageIoError>;

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    ImageIoError::Io { path: path.display().to_string(), source }
}

fn bad(path: &Path, offset: usize, msg: impl Into<String>) -> ImageIoError {
    ImageIoError::Malformed { path: path.display().to_string(), offset, msg: msg.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn token(&mut self, path: &Path) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(bad(path, start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| bad(path, start, "non-ASCII header token"))
    }

    fn skip_single_whitespace(&mut self) {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| io_err(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| io_err(path, e))?;
    Ok(buf)
}

fn parse_dims(path: &Path, cur: &mut Cursor) -> Result<(usize, usize)> {
    let pos = cur.pos;
    let w: usize = cur.token(path)?.parse().map_err(|_| bad(path, pos, "bad width"))?;
    let pos = cur.pos;
    let h: usize = cur.token(path)?.parse().map_err(|_| bad(path, pos, "bad height"))?;
    if w == 0 || h == 0 {
        return Err(bad(path, pos, "zero extent"));
    }
    Ok((w, h))
}

// ---- PPM (P6, maxval 255) ----

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(w, "P6\n{width} {height}\n255\n").map_err(|e| io_err(path, e))?;
    w.write_all(rgb).map_err(|e| io_err(path, e))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_all(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.token(path)? != "P6" {
        return Err(bad(path, 0, "expected P6"));
    }
    let (w, h) = parse_dims(path, &mut cur)?;
    let pos = cur.pos;
    if cur.token(path)? != "255" {
        return Err(bad(path, pos, "expected maxval 255"));
    }
    cur.skip_single_whitespace();
    let need = w * h * 3;
    if bytes.len() - cur.pos < need {
        return Err(bad(path, cur.pos, format!("payload needs {need} bytes")));
    }
    Ok((w, h, bytes[cur.pos..cur.pos + need].to_vec()))
}

// ---- PGM (P5, maxval 255) ----

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height);
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| io_err(path, e))?;
    w.write_all(gray).map_err(|e| io_err(path, e))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_all(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.token(path)? != "P5" {
        return Err(bad(path, 0, "expected P5"));
    }
    let (w, h) = parse_dims(path, &mut cur)?;
    let pos = cur.pos;
    if cur.token(path)? != "255" {
        return Err(bad(path, pos, "expected maxval 255"));
    }
    cur.skip_single_whitespace();
    let need = w * h;
    if bytes.len() - cur.pos < need {
        return Err(bad(path, cur.pos, format!("payload needs {need} bytes")));
    }
    Ok((w, h, bytes[cur.pos..cur.pos + need].to_vec()))
}

// ---- PFM (grayscale "Pf", scale -1.0 = little endian) ----
// Scanlines run bottom-to-top per the PFM convention; `values` here is
// top-to-bottom row-major, the writer/reader flip.

pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(|e| io_err(path, e))?;
    for row in (0..height).rev() {
        for col in 0..width {
            w.write_all(&values[row * width + col].to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read_all(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.token(path)? != "Pf" {
        return Err(bad(path, 0, "expected grayscale Pf"));
    }
    let (w, h) = parse_dims(path, &mut cur)?;
    let pos = cur.pos;
    let scale: f32 = cur.token(path)?.parse().map_err(|_| bad(path, pos, "bad scale"))?;
    if scale >= 0.0 {
        return Err(bad(path, pos, "big-endian PFM not supported (scale must be negative)"));
    }
    cur.skip_single_whitespace();
    let need = w * h * 4;
    if bytes.len() - cur.pos < need {
        return Err(bad(path, cur.pos, format!("payload needs {need} bytes, have {}", bytes.len() - cur.pos)));
    }
    let mut values = vec![0.0f32; w * h];
    let mut off = cur.pos;
    for row in (0..h).rev() {
        for col in 0..w {
            let b = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
            values[row * w + col] = f32::from_le_bytes(b);
            off += 4;
        }
    }
    Ok((w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pfm_roundtrip_bit_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let vals: Vec<f32> = (0..12).map(|i| (i as f32).sqrt() * 1.5 - 2.0).collect();
        write_pfm(&p, 4, 3, &vals).unwrap();
        let (w, h, back) = read_pfm(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(
            vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pfm_truncation_reports_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.pfm");
        write_pfm(&p, 4, 4, &vec![1.0; 16]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        match read_pfm(&p) {
            Err(ImageIoError::Malformed { path, .. }) => assert!(path.contains("t.pfm")),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn ppm_pgm_roundtrip() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 17) as u8).collect();
        write_ppm(&p1, 3, 2, &rgb).unwrap();
        assert_eq!(read_ppm(&p1).unwrap(), (3, 2, rgb));

        let p2 = dir.path().join("a.pgm");
        let gray: Vec<u8> = vec![0, 255, 255, 0, 0, 255];
        write_pgm(&p2, 3, 2, &gray).unwrap();
        assert_eq!(read_pgm(&p2).unwrap(), (3, 2, gray));
    }

    #[test]
    fn payload_can_start_with_whitespace_byte() {
        // a binary payload whose first byte is ASCII whitespace must survive
        let dir = tempdir().unwrap();
        let p = dir.path().join("w.pgm");
        let gray = vec![b' ', 10, 13, 9];
        write_pgm(&p, 2, 2, &gray).unwrap();
        assert_eq!(read_pgm(&p).unwrap().2, gray);
    }
}
