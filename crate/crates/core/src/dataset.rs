//! Binary dataset files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! header : u32 format_version, u32 N, u32 M, u64 n_items, u64 base_seed
//! item   : f32 × 2N   echo, re/im interleaved
//!          f32 × M    label
//!          f32        P
//!          f32 × 3P   (amplitude, freq, phase) per target
//! ```
//!
//! A JSON sidecar at `<path>.json` repeats the header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{DatasetItem, Echo, LabelVector, Scene, Target};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub n: u32,
    pub m: u32,
    pub n_items: u64,
    pub base_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub items: Vec<DatasetItem>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_item(item: &DatasetItem, out: &mut Vec<u8>) {
    for s in &item.echo.samples {
        put_f32(out, s.re);
        put_f32(out, s.im);
    }
    for &v in &item.label.values {
        put_f32(out, v);
    }
    put_f32(out, item.scene.targets.len() as f64);
    for t in &item.scene.targets {
        put_f32(out, t.amplitude);
        put_f32(out, t.freq);
        put_f32(out, t.phase);
    }
}

pub fn write_dataset(path: &Path, base_seed: u64, items: &[DatasetItem]) -> Result<DatasetHeader> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("write_dataset", "no items"))?;
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        n: first.echo.len() as u32,
        m: first.label.values.len() as u32,
        n_items: items.len() as u64,
        base_seed,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(HEADER_BYTES);
    buf.extend_from_slice(&header.format_version.to_le_bytes());
    buf.extend_from_slice(&header.n.to_le_bytes());
    buf.extend_from_slice(&header.m.to_le_bytes());
    buf.extend_from_slice(&header.n_items.to_le_bytes());
    buf.extend_from_slice(&header.base_seed.to_le_bytes());
    for (i, item) in items.iter().enumerate() {
        if item.echo.len() != header.n as usize || item.label.values.len() != header.m as usize {
            return Err(Error::invalid("write_dataset", format!("item {i} has inconsistent lengths")));
        }
        encode_item(item, &mut buf);
        if buf.len() > 1 << 20 {
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
            buf.clear();
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&header)?;
    std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn f32(&mut self) -> Option<f64> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::CorruptDataset {
            index: 0,
            reason: "file shorter than header".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let header = DatasetHeader {
        format_version: u32_at(0),
        n: u32_at(4),
        m: u32_at(8),
        n_items: u64_at(12),
        base_seed: u64_at(20),
    };
    if header.format_version != FORMAT_VERSION {
        return Err(Error::CorruptDataset {
            index: 0,
            reason: format!("unsupported format version {}", header.format_version),
        });
    }
    let (n, m) = (header.n as usize, header.m as usize);
    let mut cur = Cursor {
        bytes,
        pos: HEADER_BYTES,
    };
    let mut items = Vec::with_capacity(header.n_items.min(1 << 24) as usize);
    for index in 0..header.n_items {
        let corrupt = |reason: &str| Error::CorruptDataset {
            index,
            reason: reason.to_string(),
        };
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let re = cur.f32().ok_or_else(|| corrupt("truncated echo"))?;
            let im = cur.f32().ok_or_else(|| corrupt("truncated echo"))?;
            samples.push(Complex64::new(re, im));
        }
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            values.push(cur.f32().ok_or_else(|| corrupt("truncated label"))?);
        }
        let p = cur.f32().ok_or_else(|| corrupt("missing target count"))?;
        if !(p >= 1.0 && p.fract() == 0.0 && p <= 1e6) {
            return Err(corrupt(&format!("bad target count {p}")));
        }
        let mut targets = Vec::with_capacity(p as usize);
        for _ in 0..p as usize {
            let amplitude = cur.f32().ok_or_else(|| corrupt("truncated scene"))?;
            let freq = cur.f32().ok_or_else(|| corrupt("truncated scene"))?;
            // f32 storage can round a frequency just below 1 up to 1.
            let freq = if freq >= 1.0 { freq - 1.0 } else { freq };
            let phase = cur.f32().ok_or_else(|| corrupt("truncated scene"))?;
            targets.push(Target {
                amplitude,
                freq,
                phase,
            });
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(corrupt("non-finite value"));
        }
        items.push(DatasetItem {
            // The record does not carry the SNR; items are known to be noisy.
            echo: Echo {
                samples,
                snr_db: f64::NAN,
            },
            label: LabelVector { values },
            scene: Scene { targets },
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptDataset {
            index: header.n_items,
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(Dataset { header, items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_dataset, RadarConfig};

    #[test]
    fn round_trip_is_lossless_at_f32_precision() {
        let cfg = RadarConfig::new(16, 4, 0).unwrap();
        let items = generate_dataset(5, &cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let header = write_dataset(&path, 11, &items).unwrap();
        assert_eq!(header.n, 16);
        assert_eq!(header.m, 64);
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.header, header);
        for (a, b) in items.iter().zip(&back.items) {
            for (x, y) in a.echo.samples.iter().zip(&b.echo.samples) {
                assert_eq!(x.re as f32, y.re as f32);
                assert_eq!(x.im as f32, y.im as f32);
            }
            assert_eq!(a.scene.targets.len(), b.scene.targets.len());
            for (x, y) in a.label.values.iter().zip(&b.label.values) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let sidecar: DatasetHeader =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar, header);
    }

    #[test]
    fn truncation_reports_item_index() {
        let cfg = RadarConfig::new(8, 2, 0).unwrap();
        let items = generate_dataset(3, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&path, 1, &items).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        match decode_dataset(&bytes[..bytes.len() - 6]) {
            Err(Error::CorruptDataset { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
