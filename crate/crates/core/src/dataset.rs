//! Observation matrices and their on-disk formats.
//!
//! CSV: one observation per line, comma-separated, each value printed with
//! 17 significant digits (`{:.16e}`), no header.
//!
//! Binary: a 16-byte header followed by the values as little-endian f64 in
//! row-major order.
//!
//! | offset | size | content              |
//! |--------|------|----------------------|
//! | 0      | 4    | magic `MRA1`         |
//! | 4      | 4    | n, u32 LE            |
//! | 8      | 4    | d, u32 LE            |
//! | 12     | 4    | reserved, zero       |

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::StreamId;

pub const BINARY_MAGIC: &[u8; 4] = b"MRA1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    d: usize,
    points: Vec<f64>,
    provenance: Option<StreamId>,
}

impl Dataset {
    pub fn from_parts(d: usize, points: Vec<f64>, provenance: Option<StreamId>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !points.len().is_multiple_of(d) {
            return Err(Error::Format(format!("{} values do not fill rows of length {d}", points.len())));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite value in dataset".into()));
        }
        Ok(Self { d, points, provenance })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Format("rows of unequal length".into()));
        }
        Self::from_parts(d, rows.concat(), None)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn provenance(&self) -> Option<&StreamId> {
        self.provenance.as_ref()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter().map(|x| x / self.len() as f64).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for r in self.rows() {
            line.clear();
            for (j, x) in r.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{x:.16e}"));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut d = None;
        let mut points = Vec::new();
        for (lineno, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            match d {
                None => d = Some(row.len()),
                Some(k) if k != row.len() => {
                    return Err(Error::Format(format!(
                        "line {}: expected {k} values, got {}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            points.extend(row);
        }
        let d = d.ok_or(Error::EmptyDataset)?;
        Self::from_parts(d, points, None)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let n = u32::try_from(self.len()).map_err(|_| Error::Format("too many rows".into()))?;
        let d = u32::try_from(self.d).map_err(|_| Error::Format("dimension too large".into()))?;
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(&d.to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        for x in &self.points {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header).map_err(|_| Error::Format("truncated header".into()))?;
        if &header[0..4] != BINARY_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().unwrap()) as usize;
        let (n, d) = (word(4), word(8));
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != n * d * 8 {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                n * d * 8,
                bytes.len()
            )));
        }
        let points = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Self::from_parts(d, points, None)
    }

    /// Reads either format, detected from the leading bytes.
    pub fn read_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_csv(bytes.as_slice())
        }
    }

    /// Writes binary for a `.bin` extension, CSV otherwise.
    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if path.extension().is_some_and(|e| e == "bin") {
            self.write_binary(file)
        } else {
            self.write_csv(file)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_bits() {
        let ds = Dataset::from_rows(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678901234567]]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("1.0000000000000001e-1,"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn binary_header_layout() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        ds.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"MRA1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 24);
        assert_eq!(Dataset::read_binary(buf.as_slice()).unwrap(), ds);
        assert!(Dataset::read_binary(&buf[..20]).is_err());
    }

    #[test]
    fn csv_rejects_ragged() {
        assert!(Dataset::read_csv("1,2\n3\n".as_bytes()).is_err());
        assert_eq!(Dataset::read_csv("".as_bytes()), Err(Error::EmptyDataset));
    }
}
