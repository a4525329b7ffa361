//! Checkpoint files.
//!
//! ```text
//! "DSSR" u32 version
//! u32 N, G, C, K, conv kernel, DR kernel; u8 shared_weights, u8 edu_init
//! u32 count, then per parameter:  u32 name_len, name, u32 ndim, u32 dims…, f32 data…
//! u32 count, then per BN buffer:  same blob layout
//! u64 FNV-1a of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rrpsr_autodiff::{Real, Tensor};

use crate::error::{Error, Result};
use crate::network::{DssrArch, DssrNet, EduInit, ParamStore};

pub const MAGIC: &[u8; 4] = b"DSSR";
pub const VERSION: u32 = 1;

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_store<T: Real>(out: &mut Vec<u8>, store: &ParamStore<T>) {
    put_u32(out, store.len());
    for (name, t) in store.iter() {
        put_u32(out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.shape().len());
        for &d in t.shape() {
            put_u32(out, d);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

pub fn encode<T: Real>(net: &DssrNet<T>) -> Vec<u8> {
    let a = net.arch();
    let mut out = Vec::with_capacity(net.params().numel() * 4 + 4096);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    for v in [a.n_samples, a.oversample, a.channels, a.stages, 3, a.dr_kernel] {
        put_u32(&mut out, v);
    }
    out.push(u8::from(a.shared_weights));
    out.push(match a.edu_init {
        EduInit::Random => 0,
        EduInit::DftShift => 1,
    });
    put_store(&mut out, net.params());
    put_store(&mut out, net.buffers());
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn save<T: Real>(net: &DssrNet<T>, path: &Path) -> Result<()> {
    let bytes = encode(net);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DssrNet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn store(&mut self) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::default();
        for _ in 0..self.u32()? {
            let len = self.u32()?;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = self.u32()?;
            let shape = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = self.take(numel.checked_mul(4).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("{name}: shape {shape:?} overflows"))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store
                .insert(name, Tensor::new(&shape, data)?)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        }
        Ok(store)
    }
}

pub fn decode(bytes: &[u8]) -> Result<DssrNet<f32>> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("missing DSSR magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if checksum(body) != stored {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let n_samples = r.u32()?;
    let oversample = r.u32()?;
    let channels = r.u32()?;
    let stages = r.u32()?;
    let conv_kernel = r.u32()?;
    let dr_kernel = r.u32()?;
    if conv_kernel != 3 {
        return Err(Error::CorruptCheckpoint(format!("conv kernel {conv_kernel} is not supported")));
    }
    let shared_weights = r.u8()? != 0;
    let edu_init = match r.u8()? {
        0 => EduInit::Random,
        1 => EduInit::DftShift,
        other => return Err(Error::CorruptCheckpoint(format!("unknown EDU init tag {other}"))),
    };
    let arch = DssrArch {
        n_samples,
        oversample,
        channels,
        stages,
        dr_kernel,
        shared_weights,
        edu_init,
    };
    arch.validate().map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let params = r.store()?;
    let buffers = r.store()?;
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    DssrNet::from_parts(arch, params, buffers)
}
