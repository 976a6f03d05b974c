//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SSLRCKPT"
//! version  u32
//! config   i32 x 6  num_layers num_heads d_model d_ff max_len vocab_size
//!          f32      dropout
//! width    u32      bytes per element (4 or 8)
//! count    u32      number of tensors
//! tensors  count x (name_len u32, name utf8, rank u32, dims u32 x rank, values)
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{ParamStore, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_i32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as i32).to_le_bytes());
}

pub fn write_checkpoint<T: Real>(model: &Model<T>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + model.num_parameters() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    for x in [c.num_layers, c.num_heads, c.d_model, c.d_ff, c.max_len, c.vocab_size] {
        put_i32(&mut out, x);
    }
    out.extend_from_slice(&(c.dropout as f32).to_le_bytes());
    put_u32(&mut out, T::BYTES as u32);
    put_u32(&mut out, model.params().len() as u32);
    for (_, name, t) in model.params().iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated while reading {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self, what: &str) -> Result<usize, String> {
        let x = i32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes"));
        usize::try_from(x).map_err(|_| format!("negative {what}: {x}"))
    }
}

/// Parses a checkpoint. Values stored at a different width than `T` are
/// converted.
pub fn read_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let fail = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + DIGEST_LEN {
        return Err(fail("truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fail("checksum mismatch: file is corrupt or truncated".into()));
    }
    parse_body::<T>(body).map_err(fail)
}

fn parse_body<T: Real>(body: &[u8]) -> Result<Model<T>, String> {
    let mut r = Reader {
        buf: body,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims.iter_mut().zip(["num_layers", "num_heads", "d_model", "d_ff", "max_len", "vocab_size"]) {
        *d = r.i32(name)?;
    }
    let dropout = f32::from_le_bytes(r.take(4, "dropout")?.try_into().expect("4 bytes"));
    let config = EncoderConfig {
        num_layers: dims[0],
        num_heads: dims[1],
        d_model: dims[2],
        d_ff: dims[3],
        max_len: dims[4],
        vocab_size: dims[5],
        // shortest decimal of the f32 recovers configs like 0.1 exactly
        dropout: dropout.to_string().parse().map_err(|_| "bad dropout".to_string())?,
    };
    let width = r.u32("element width")? as usize;
    if width != 4 && width != 8 {
        return Err(format!("unsupported element width {width}"));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::<T>::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(width).ok_or("tensor too large")?, "values")?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect();
        let decay = name.ends_with(".weight") || name.starts_with("embeddings.");
        let tensor = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        store.insert(name, tensor, decay).map_err(|e| e.to_string())?;
    }
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - r.pos));
    }
    Model::from_params(config, store).map_err(|e| e.to_string())
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_checkpoint(model))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
