//! Single-head scaled dot-product self-attention over turn embeddings and
//! the pooling that turns its output into one context vector `g`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::config::{CacheConfig, PoolingMode};
use crate::embedder::token_hash::fnv1a64;
use crate::error::{Error, Result};
use crate::vector::{dot, Matrix, UnitVector};

const WEIGHTS_MAGIC: &[u8; 4] = b"CTXW";
const WEIGHTS_VERSION: u16 = 1;

/// Projection matrices plus the encoding/pooling switches.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    /// Which of `w_q`, `w_k`, `w_v` are the identity, so projection can be skipped.
    identity: [bool; 3],
    pub positional_encoding: bool,
    pub pooling: PoolingMode,
}

impl AttentionParams {
    pub fn identity(d: usize) -> Self {
        AttentionParams {
            w_q: Matrix::identity(d),
            w_k: Matrix::identity(d),
            w_v: Matrix::identity(d),
            identity: [true; 3],
            positional_encoding: true,
            pooling: PoolingMode::Last,
        }
    }

    pub fn from_config(cfg: &CacheConfig) -> Result<Self> {
        let mut params = match &cfg.weights_path {
            Some(path) => read_weights(path)?,
            None => AttentionParams::identity(cfg.d),
        };
        if params.dim() != cfg.d {
            return Err(Error::Dimension { expected: cfg.d, actual: params.dim() });
        }
        params.positional_encoding = cfg.positional_encoding;
        params.pooling = cfg.pooling_mode;
        Ok(params)
    }

    pub fn with_positional_encoding(mut self, on: bool) -> Self {
        self.positional_encoding = on;
        self
    }

    pub fn with_pooling(mut self, pooling: PoolingMode) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        let d = w_q.rows();
        for m in [&w_q, &w_k, &w_v] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Dimension { expected: d, actual: m.cols() });
            }
            if m.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateVector("non-finite attention weight"));
            }
        }
        let identity = [w_q.is_identity(), w_k.is_identity(), w_v.is_identity()];
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            identity,
            positional_encoding: true,
            pooling: PoolingMode::Last,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    /// Stable fingerprint of everything that shapes `g`. Entries recorded
    /// under one stamp are never compared against another.
    pub fn version(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + 24 * self.dim() * self.dim());
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        bytes.push(u8::from(self.positional_encoding));
        bytes.push(match self.pooling {
            PoolingMode::Last => 0,
            PoolingMode::Mean => 1,
        });
        for m in [&self.w_q, &self.w_k, &self.w_v] {
            for v in m.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

/// Ordered turn vectors, oldest first, current query last.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSequence {
    vectors: Vec<UnitVector>,
}

impl ContextSequence {
    pub fn new(vectors: Vec<UnitVector>) -> Result<Self> {
        let first = vectors.first().ok_or(Error::DegenerateVector("empty context sequence"))?;
        let d = first.dim();
        if let Some(bad) = vectors.iter().find(|v| v.dim() != d) {
            return Err(Error::Dimension { expected: d, actual: bad.dim() });
        }
        Ok(ContextSequence { vectors })
    }

    pub fn vectors(&self) -> &[UnitVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }
}

/// Sinusoidal encoding component for position `pos` and column `j`.
pub fn sinusoid(pos: usize, j: usize, d: usize) -> f64 {
    let pair = (j - j % 2) as f64;
    let angle = pos as f64 / 10000f64.powf(pair / d as f64);
    if j.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Stacks the sequence into rows, adding the sinusoidal encoding when `on`.
pub fn positional_encode(seq: &ContextSequence, on: bool) -> Matrix {
    let d = seq.dim();
    let mut rows = Matrix::zeros(seq.len(), d);
    for (i, v) in seq.vectors().iter().enumerate() {
        let row = rows.row_mut(i);
        row.copy_from_slice(v);
        if on {
            for (j, x) in row.iter_mut().enumerate() {
                *x += sinusoid(i, j, d);
            }
        }
    }
    rows
}

/// Numerically stable softmax (row max subtracted before `exp`).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Clone, Debug)]
pub struct Attended {
    /// Row-stochastic attention matrix `A`.
    pub weights: Matrix,
    /// `A V`
    pub output: Matrix,
}

fn project(x: &Matrix, w: &Matrix, identity: bool) -> Result<Matrix> {
    if identity {
        Ok(x.clone())
    } else {
        x.matmul(w)
    }
}

pub fn attend(rows: &Matrix, params: &AttentionParams) -> Result<Attended> {
    if rows.rows() == 0 {
        return Err(Error::DegenerateVector("no rows to attend over"));
    }
    if rows.cols() != params.dim() {
        return Err(Error::Dimension { expected: params.dim(), actual: rows.cols() });
    }
    let q = project(rows, &params.w_q, params.identity[0])?;
    let k = project(rows, &params.w_k, params.identity[1])?;
    let v = project(rows, &params.w_v, params.identity[2])?;
    let n = rows.rows();
    let scale = 1.0 / (params.dim() as f64).sqrt();
    let mut weights = Matrix::zeros(n, n);
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(q.row(i), k.row(j)) * scale).collect();
        weights.row_mut(i).copy_from_slice(&softmax(&scores));
    }
    let output = weights.matmul(&v)?;
    Ok(Attended { weights, output })
}

/// `g = normalize(pool(attend(positional_encode(seq))))`.
pub fn pool_context(seq: &ContextSequence, params: &AttentionParams) -> Result<UnitVector> {
    let rows = positional_encode(seq, params.positional_encoding);
    let attended = attend(&rows, params)?;
    let out = &attended.output;
    let pooled: Vec<f64> = match params.pooling {
        PoolingMode::Last => out.row(out.rows() - 1).to_vec(),
        PoolingMode::Mean => {
            let n = out.rows() as f64;
            (0..out.cols()).map(|j| (0..out.rows()).map(|i| out[(i, j)]).sum::<f64>() / n).collect()
        }
    };
    UnitVector::normalize(&pooled)
}

/// Binary weights file: `CTXW`, u16 version, u32 d, then `W_q`, `W_k`, `W_v`
/// as row-major little-endian f64.
pub fn write_weights(path: impl AsRef<Path>, params: &AttentionParams) -> Result<()> {
    let mut buf = Vec::new();
    encode_weights(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<AttentionParams> {
    let bytes = fs::read(path)?;
    decode_weights(&mut bytes.as_slice())
}

pub fn encode_weights(w: &mut impl Write, params: &AttentionParams) -> io::Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(params.dim() as u32).to_le_bytes())?;
    for m in [&params.w_q, &params.w_k, &params.w_v] {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_weights(r: &mut impl Read) -> Result<AttentionParams> {
    let bad = |msg: &str| Error::Storage(format!("weights file: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != WEIGHTS_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    if d == 0 || d > 1 << 14 {
        return Err(bad("implausible dimension"));
    }
    let mut read_matrix = || -> Result<Matrix> {
        let mut data = vec![0.0; d * d];
        let mut b8 = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Matrix::from_vec(d, d, data)
    };
    let w_q = read_matrix()?;
    let w_k = read_matrix()?;
    let w_v = read_matrix()?;
    AttentionParams::new(w_q, w_k, w_v)
}
