//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   5 bytes  "MLCLD"
//! version u8       1
//! f,h,e,c u32 x 4  input, hidden, embed, label dims
//! query   f64...   w1 (f*h), b1 (h), w2 (h*h), b2 (h), w3 (h*e), b3 (e)
//! key     f64...   same six matrices
//! head    f64...   dist_w (e*c), dist_b (c)
//! names   c x (u32 byte length + UTF-8 bytes)
//! phase   u8       0 = pretrained, 1 = finetuned
//! seed    u64
//! ```
//!
//! Matrices are row-major. Loading validates magic, version, dimension
//! sanity, and exact payload length before accepting anything.

use crate::matrix::Matrix;
use crate::model::{DistHeadInput, EncoderConfig, EncoderWeights, ModelPair};
use crate::optim::Param;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"MLCLD";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a model checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("truncated checkpoint: needed {needed} more bytes at {context}")]
    Truncated { context: &'static str, needed: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid dimensions f={0} h={1} e={2} c={3}")]
    BadDims(u32, u32, u32, u32),
    #[error("label name {0} is not valid UTF-8")]
    BadName(usize),
    #[error("unknown phase tag {0}")]
    BadPhase(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrained,
    Finetuned,
}

impl Phase {
    fn to_byte(self) -> u8 {
        match self {
            Phase::Pretrained => 0,
            Phase::Finetuned => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, CheckpointError> {
        match b {
            0 => Ok(Phase::Pretrained),
            1 => Ok(Phase::Finetuned),
            other => Err(CheckpointError::BadPhase(other)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub label_names: Vec<String>,
    pub phase: Phase,
    pub seed: u64,
}

/// A loaded checkpoint: raw weights plus metadata. Runtime-only settings
/// (dropout, head input) are not stored; [`ModelPair::from_checkpoint`]
/// reattaches them.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub query: EncoderWeights,
    pub key: EncoderWeights,
    pub dist_w: Matrix,
    pub dist_b: Matrix,
    pub meta: CheckpointMeta,
}

impl ModelPair {
    pub fn from_checkpoint(ck: Checkpoint, dropout_rate: f64, head_input: DistHeadInput) -> Self {
        ModelPair {
            config: ck.config,
            dropout_rate,
            head_input,
            query: ck.query,
            key: ck.key,
            dist_w: Param::new(ck.dist_w),
            dist_b: Param::new(ck.dist_b),
        }
    }
}

fn push_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for &v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    model: &ModelPair,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let cfg = &model.config;
    assert_eq!(
        meta.label_names.len(),
        cfg.num_labels,
        "label name count must match the head width"
    );
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for dim in [cfg.input_dim, cfg.hidden_dim, cfg.embed_dim, cfg.num_labels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for tower in [&model.query, &model.key] {
        for m in tower.values() {
            push_matrix(&mut buf, m);
        }
    }
    push_matrix(&mut buf, &model.dist_w.value);
    push_matrix(&mut buf, &model.dist_b.value);
    for name in &meta.label_names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    buf.push(meta.phase.to_byte());
    buf.extend_from_slice(&meta.seed.to_le_bytes());

    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                context,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, context: &'static str) -> Result<Matrix, CheckpointError> {
        let bytes = self.take(rows * cols * 8, context)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data).expect("sized read"))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(5, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let f = r.u32("dims")?;
    let h = r.u32("dims")?;
    let e = r.u32("dims")?;
    let c = r.u32("dims")?;
    if f == 0 || h == 0 || e == 0 || c == 0 {
        return Err(CheckpointError::BadDims(f, h, e, c));
    }
    let (f, h, e, c) = (f as usize, h as usize, e as usize, c as usize);

    let tower = |r: &mut Reader| -> Result<EncoderWeights, CheckpointError> {
        Ok(EncoderWeights {
            w1: Param::new(r.matrix(f, h, "w1")?),
            b1: Param::new(r.matrix(1, h, "b1")?),
            w2: Param::new(r.matrix(h, h, "w2")?),
            b2: Param::new(r.matrix(1, h, "b2")?),
            w3: Param::new(r.matrix(h, e, "w3")?),
            b3: Param::new(r.matrix(1, e, "b3")?),
        })
    };
    let query = tower(&mut r)?;
    let key = tower(&mut r)?;
    let dist_w = r.matrix(e, c, "dist_w")?;
    let dist_b = r.matrix(1, c, "dist_b")?;

    let mut label_names = Vec::with_capacity(c);
    for i in 0..c {
        let len = r.u32("name length")? as usize;
        let bytes = r.take(len, "name bytes")?;
        let name = std::str::from_utf8(bytes)
            .map_err(|_| CheckpointError::BadName(i))?
            .to_string();
        label_names.push(name);
    }
    let phase = Phase::from_byte(r.u8("phase")?)?;
    let seed = r.u64("seed")?;
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }

    Ok(Checkpoint {
        config: EncoderConfig { input_dim: f, hidden_dim: h, embed_dim: e, num_labels: c },
        query,
        key,
        dist_w,
        dist_b,
        meta: CheckpointMeta { label_names, phase, seed },
    })
}
