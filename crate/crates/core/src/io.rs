//! File formats: a single JSON header line followed by raw little-endian
//! `f64` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &str = "tsdmd-snapshots";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Header of a snapshot matrix file. The payload is `rows * cols` values in
/// column-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub magic: String,
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub t0: f64,
    pub dt: f64,
    pub endianness: String,
    pub order: String,
    /// Free-form metadata: grid, component layout, problem description.
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl SnapshotHeader {
    pub fn new(rows: usize, cols: usize, t0: f64, dt: f64, meta: serde_json::Value) -> Self {
        Self {
            magic: SNAPSHOT_MAGIC.into(),
            version: SNAPSHOT_VERSION,
            rows,
            cols,
            t0,
            dt,
            endianness: "little".into(),
            order: "column-major".into(),
            meta,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.magic != SNAPSHOT_MAGIC || self.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unknown snapshot format {} v{}", self.magic, self.version)));
        }
        if self.endianness != "little" || self.order != "column-major" {
            return Err(Error::Format(format!("unsupported layout {} / {}", self.endianness, self.order)));
        }
        Ok(())
    }
}

/// Writes `header` as one JSON line, then `data` as little-endian `f64`.
pub fn write_blob<H: Serialize>(path: &Path, header: &H, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_blob<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format(format!("{}: missing header line", path.display())));
    }
    let header = serde_json::from_slice(&line)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: payload is not a whole number of f64 values", path.display())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, data))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes rows of already formatted cells as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let data = vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let h = SnapshotHeader::new(5, 1, 0.0, 1.0, serde_json::json!({"k": 1}));
        write_blob(&p, &h, &data).unwrap();
        let (h2, d2): (SnapshotHeader, Vec<f64>) = read_blob(&p).unwrap();
        assert_eq!(h, h2);
        assert_eq!(data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"{\"a\":1}\n1234567").unwrap();
        assert!(read_blob::<serde_json::Value>(&p).is_err());
        std::fs::write(&p, b"{\"a\":1}").unwrap();
        assert!(read_blob::<serde_json::Value>(&p).is_err());
    }
}
