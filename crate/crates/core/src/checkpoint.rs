//! Checkpoint file: magic and format version, the serialized model
//! configuration, one record per named parameter (name length, name, dtype
//! code, rank, extents, raw little-endian data), and an optional training
//! state section (progress counters, config fingerprint, Adam moments) that
//! makes resumed runs trajectory-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DespeckleNet, ModelConfig, StageConfig};
use crate::optim::{AdamState, MomentEntry};
use crate::scalar::{Dtype, Scalar};
use crate::train::TrainState;

const MAGIC: &[u8; 8] = b"DSPKNET1";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_data<S: Scalar>(out: &mut Vec<u8>, data: &[S]) {
    for &v in data {
        v.write_le(out);
    }
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &DespeckleNet<S>,
    state: Option<&TrainState<S>>,
) -> Result<()> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(S::DTYPE.code());

    put_u32(&mut out, cfg.in_channels as u32);
    put_u32(&mut out, cfg.decoder_dim as u32);
    put_u32(&mut out, cfg.stages.len() as u32);
    for s in &cfg.stages {
        for v in [s.kernel, s.embed_dim, s.stride, s.padding, s.heads, s.reduction, s.mlp_dim] {
            put_u32(&mut out, v as u32);
        }
        put_f64(&mut out, s.dropout);
    }

    let params = model.parameters();
    put_u32(&mut out, params.len() as u32);
    for p in params {
        put_str(&mut out, p.name());
        out.push(S::DTYPE.code());
        put_u32(&mut out, p.shape().len() as u32);
        for &d in p.shape() {
            put_u32(&mut out, d as u32);
        }
        put_data(&mut out, &p.data());
    }

    match state {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            put_u64(&mut out, st.epochs_done);
            put_u64(&mut out, st.step);
            put_f64(&mut out, st.best_val_psnr);
            put_u64(&mut out, st.seed);
            put_f64(&mut out, st.lr);
            put_u64(&mut out, st.batch_size);
            put_f64(&mut out, st.lambda1);
            put_f64(&mut out, st.lambda2);
            put_u32(&mut out, st.adam.entries.len() as u32);
            for e in &st.adam.entries {
                put_str(&mut out, &e.name);
                put_u64(&mut out, e.m.len() as u64);
                put_data(&mut out, &e.m);
                put_data(&mut out, &e.v);
            }
        }
    }

    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated while reading {what} (need {n} bytes at offset {})",
                self.path, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: {what} is not UTF-8", self.path)))
    }

    fn data<S: Scalar>(&mut self, count: usize, what: &str) -> Result<Vec<S>> {
        let width = S::DTYPE.size_bytes();
        let raw = self.take(count * width, what)?;
        Ok(raw.chunks_exact(width).map(S::read_le).collect())
    }
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(DespeckleNet<S>, Option<TrainState<S>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a despeckler checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let dtype_code = r.u8("dtype")?;
    let dtype = Dtype::from_code(dtype_code).ok_or_else(|| {
        Error::Checkpoint(format!("{}: unknown dtype code {dtype_code}", path.display()))
    })?;
    if dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint stores {dtype:?} but the requested model is {:?}",
            path.display(),
            S::DTYPE
        )));
    }

    let in_channels = r.u32("in_channels")? as usize;
    let decoder_dim = r.u32("decoder_dim")? as usize;
    let n_stages = r.u32("stage count")? as usize;
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let mut f = [0usize; 7];
        for v in f.iter_mut() {
            *v = r.u32("stage field")? as usize;
        }
        stages.push(StageConfig {
            kernel: f[0],
            embed_dim: f[1],
            stride: f[2],
            padding: f[3],
            heads: f[4],
            reduction: f[5],
            mlp_dim: f[6],
            dropout: r.f64("stage dropout")?,
        });
    }
    let cfg = ModelConfig {
        stages,
        decoder_dim,
        in_channels,
    };
    cfg.validate()?;

    let n_params = r.u32("parameter count")? as usize;
    let mut records = std::collections::HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string("parameter name")?;
        let pd = r.u8("parameter dtype")?;
        if pd != dtype_code {
            return Err(Error::Checkpoint(format!(
                "{}: parameter '{name}' has dtype code {pd}, file header says {dtype_code}",
                path.display()
            )));
        }
        let rank = r.u32("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data: Vec<S> = r.data(numel, "parameter data")?;
        records.insert(name, (shape, data));
    }

    // Seed is irrelevant: every weight is overwritten below.
    let net = DespeckleNet::<S>::new(cfg, 0)?;
    for p in net.parameters() {
        let (shape, data) = records.remove(p.name()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: missing parameter '{}'",
                path.display(),
                p.name()
            ))
        })?;
        if shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: parameter '{}' has shape {shape:?}, model expects {:?}",
                path.display(),
                p.name(),
                p.shape()
            )));
        }
        p.set_data(data)?;
    }
    if let Some(extra) = records.keys().next() {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint parameter '{extra}' does not exist in the model",
            path.display()
        )));
    }

    let state = match r.u8("state flag")? {
        0 => None,
        1 => {
            let epochs_done = r.u64("epochs_done")?;
            let step = r.u64("step")?;
            let best_val_psnr = r.f64("best_val_psnr")?;
            let seed = r.u64("seed")?;
            let lr = r.f64("lr")?;
            let batch_size = r.u64("batch_size")?;
            let lambda1 = r.f64("lambda1")?;
            let lambda2 = r.f64("lambda2")?;
            let n_entries = r.u32("moment entry count")? as usize;
            let mut entries = Vec::with_capacity(n_entries);
            for _ in 0..n_entries {
                let name = r.string("moment name")?;
                let count = r.u64("moment length")? as usize;
                let m = r.data(count, "first moment")?;
                let v = r.data(count, "second moment")?;
                entries.push(MomentEntry { name, m, v });
            }
            Some(TrainState {
                epochs_done,
                step,
                best_val_psnr,
                adam: AdamState { entries },
                seed,
                lr,
                batch_size,
                lambda1,
                lambda2,
            })
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "{}: bad train-state flag {other}",
                path.display()
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after checkpoint payload",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok((net, state))
}
