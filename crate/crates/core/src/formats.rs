//! Little-endian binary files for indexes, embeddings and model checkpoints.
//!
//! Index (`SPFX`):
//!
//! ```text
//! magic "SPFX" | version u32 | n u64 | d u64
//! d × posting length u64
//! for each column: length × (row u32, value f32)
//! ```
//!
//! Embeddings (`SPFE`): `magic | version u32 | n u64 | d u64`, then `n·d`
//! row-major f32 values.
//!
//! Checkpoint (`SPFM`):
//!
//! ```text
//! magic "SPFM" | version u32 | activation u32 | normalize u32 | layers u32
//! layers × (fan_in u64, fan_out u64)
//! for each layer: fan_in·fan_out weights f32 (row-major), fan_out biases f32
//! ```
//!
//! Activation codes: 0 relu, 1 sthresh, 2 identity. Parameters are stored
//! as f32, so a checkpoint round trip rounds f64 weights once; a second
//! round trip is bit-exact.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::sparse::{DenseMatrix, InvertedIndex};
use crate::trainer::{Dense, EncoderModel, OutputActivation};

pub const INDEX_MAGIC: [u8; 4] = *b"SPFX";
pub const EMBEDDINGS_MAGIC: [u8; 4] = *b"SPFE";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPFM";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("{}: truncated at byte {}", self.what, self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn size(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{}: size {v} too large", self.what)))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Fails unless `count` items of `width` bytes can still be read.
    fn expect_items(&self, count: usize, width: usize) -> Result<()> {
        match count.checked_mul(width) {
            Some(b) if b <= self.remaining() => Ok(()),
            _ => Err(Error::Format(format!("{}: truncated, {count} items declared", self.what))),
        }
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::Format(format!("{}: bad magic {:?}", self.what, found)));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!("{}: {} trailing bytes", self.what, self.remaining())));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_index(index: &InvertedIndex) -> Vec<u8> {
    let d = index.dim();
    let mut out = Vec::with_capacity(24 + 8 * d + 8 * index.nnz());
    out.extend_from_slice(&INDEX_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, index.num_rows());
    put_u64(&mut out, d);
    for j in 0..d {
        put_u64(&mut out, index.posting_len(j));
    }
    for j in 0..d {
        let (rows, values) = index.posting(j);
        for (&r, &v) in rows.iter().zip(values) {
            put_u32(&mut out, r);
            put_f32(&mut out, v);
        }
    }
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<InvertedIndex> {
    let mut r = Reader::new(bytes, "index");
    r.header(INDEX_MAGIC)?;
    let n = r.size()?;
    let d = r.size()?;
    r.expect_items(d, 8)?;
    let lens = (0..d).map(|_| r.size()).collect::<Result<Vec<_>>>()?;
    let mut postings = Vec::with_capacity(d);
    for &len in &lens {
        r.expect_items(len, 8)?;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            list.push((r.u32()?, r.f32()?));
        }
        postings.push(list);
    }
    r.finish()?;
    InvertedIndex::from_postings(d, n, postings).map_err(|e| Error::Format(format!("index: {e}")))
}

pub fn encode_embeddings(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * m.values().len());
    out.extend_from_slice(&EMBEDDINGS_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, m.rows());
    put_u64(&mut out, m.cols());
    for &v in m.values() {
        put_f32(&mut out, v);
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut r = Reader::new(bytes, "embeddings");
    r.header(EMBEDDINGS_MAGIC)?;
    let n = r.size()?;
    let d = r.size()?;
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("embeddings: shape overflows".into()))?;
    r.expect_items(len, 4)?;
    let values = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    DenseMatrix::new(n, d, values).map_err(|e| Error::Format(format!("embeddings: {e}")))
}

pub fn encode_checkpoint(model: &EncoderModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.output_activation.code());
    put_u32(&mut out, model.normalize_output as u32);
    put_u32(&mut out, model.layers.len() as u32);
    for layer in &model.layers {
        put_u64(&mut out, layer.fan_in());
        put_u64(&mut out, layer.fan_out());
    }
    for layer in &model.layers {
        for &w in layer.weights.iter() {
            put_f32(&mut out, w as f32);
        }
        for &b in layer.bias.iter() {
            put_f32(&mut out, b as f32);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderModel> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(CHECKPOINT_MAGIC)?;
    let code = r.u32()?;
    let output_activation = OutputActivation::from_code(code)
        .ok_or_else(|| Error::Format(format!("checkpoint: unknown activation code {code}")))?;
    let normalize_output = match r.u32()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("checkpoint: bad normalize flag {other}"))),
    };
    let num_layers = r.u32()? as usize;
    if num_layers == 0 {
        return Err(Error::Format("checkpoint: no layers".into()));
    }
    r.expect_items(num_layers, 16)?;
    let shapes = (0..num_layers)
        .map(|_| Ok((r.size()?, r.size()?)))
        .collect::<Result<Vec<_>>>()?;
    for pair in shapes.windows(2) {
        if pair[0].1 != pair[1].0 {
            return Err(Error::Format(format!(
                "checkpoint: layer widths {} and {} do not chain",
                pair[0].1, pair[1].0
            )));
        }
    }
    let mut layers = Vec::with_capacity(num_layers);
    for &(fan_in, fan_out) in &shapes {
        let count = fan_in
            .checked_mul(fan_out)
            .and_then(|w| w.checked_add(fan_out))
            .ok_or_else(|| Error::Format("checkpoint: layer shape overflows".into()))?;
        r.expect_items(count, 4)?;
        let mut read = |len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| {
                    let v = r.f32()?;
                    if v.is_finite() {
                        Ok(v as f64)
                    } else {
                        Err(Error::Format("checkpoint: non-finite parameter".into()))
                    }
                })
                .collect()
        };
        let weights = Array2::from_shape_vec((fan_in, fan_out), read(fan_in * fan_out)?)
            .expect("length checked");
        let bias = Array1::from(read(fan_out)?);
        layers.push(Dense { weights, bias });
    }
    r.finish()?;
    Ok(EncoderModel { layers, output_activation, normalize_output })
}

/// Writes through a temporary file in the same directory, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_index(path: &Path, index: &InvertedIndex) -> Result<()> {
    write_atomic(path, &encode_index(index))
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    decode_index(&std::fs::read(path)?)
}

pub fn save_embeddings(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_atomic(path, &encode_embeddings(m))
}

pub fn load_embeddings(path: &Path) -> Result<DenseMatrix> {
    decode_embeddings(&std::fs::read(path)?)
}

pub fn save_checkpoint(path: &Path, model: &EncoderModel) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// `column,row,value` lines, one per stored entry.
pub fn index_to_csv(index: &InvertedIndex) -> String {
    let mut out = String::from("column,row,value\n");
    for j in 0..index.dim() {
        let (rows, values) = index.posting(j);
        for (r, v) in rows.iter().zip(values) {
            out.push_str(&format!("{j},{r},{v}\n"));
        }
    }
    out
}
