//! k-of-n systematic Reed-Solomon erasure coding over GF(2^8).
//!
//! A file is zero-padded to a multiple of `k` bytes and split into `k` data
//! shards; `n - k` parity shards are appended. Any `k` distinct shards
//! reconstruct the file. The encoding matrix is a Vandermonde matrix made
//! systematic by multiplying with the inverse of its top `k x k` block, so
//! every `k`-row submatrix stays invertible.

pub mod gf256;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use gf256::Matrix;

/// Version byte leading every serialized [`PlainChunk`].
pub const CHUNK_FORMAT_VERSION: u8 = 0x01;
/// Bytes preceding the payload in the chunk wire format.
pub const CHUNK_HEADER_LEN: usize = 1 + 1 + 8;
/// Largest `n` a byte-oriented code over GF(2^8) supports.
pub const MAX_SHARDS: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid coding parameters k={k}, n={n}: need 1 <= k <= n <= 255")]
    InvalidParams { k: usize, n: usize },
    #[error("file is empty")]
    EmptyFile,
    #[error("insufficient chunks: have {have} distinct, need {need}")]
    InsufficientChunks { have: usize, need: usize },
    #[error("inconsistent chunks: {0}")]
    InconsistentChunks(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("malformed chunk encoding: {0}")]
    MalformedChunk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct CodingParams {
    k: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    k: usize,
    n: usize,
}

impl TryFrom<RawParams> for CodingParams {
    type Error = CodecError;
    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        CodingParams::new(raw.k, raw.n)
    }
}

impl From<CodingParams> for RawParams {
    fn from(p: CodingParams) -> Self {
        RawParams { k: p.k, n: p.n }
    }
}

impl CodingParams {
    pub fn new(k: usize, n: usize) -> Result<Self, CodecError> {
        if k == 0 || k > n || n > MAX_SHARDS {
            return Err(CodecError::InvalidParams { k, n });
        }
        Ok(Self { k, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Payload length of every chunk for a file of `file_len` bytes.
    pub fn shard_len(&self, file_len: u64) -> usize {
        file_len.div_ceil(self.k as u64) as usize
    }
}

impl std::fmt::Display for CodingParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.k, self.n)
    }
}

/// One erasure-coded share of a file, before encryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainChunk {
    pub index: u8,
    pub original_len: u64,
    pub payload: Vec<u8>,
}

impl PlainChunk {
    /// `version | index | original_len (u64 BE) | payload`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHUNK_HEADER_LEN + self.payload.len());
        out.push(CHUNK_FORMAT_VERSION);
        out.push(self.index);
        out.extend_from_slice(&self.original_len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < CHUNK_HEADER_LEN {
            return Err(CodecError::MalformedChunk(format!(
                "{} bytes is shorter than the {CHUNK_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0] != CHUNK_FORMAT_VERSION {
            return Err(CodecError::MalformedChunk(format!(
                "unsupported format version {:#04x}",
                bytes[0]
            )));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[2..10]);
        Ok(Self {
            index: bytes[1],
            original_len: u64::from_be_bytes(len),
            payload: bytes[CHUNK_HEADER_LEN..].to_vec(),
        })
    }
}

/// Inverse of the top `k x k` Vandermonde block; `V * top_inverse` is the
/// systematic generator.
fn vandermonde_top_inverse(k: usize) -> Matrix {
    let rows: Vec<Vec<u8>> = (0..k)
        .map(|r| (0..k).map(|c| gf256::pow(r as u8, c)).collect())
        .collect();
    Matrix::from_rows(&rows)
        .invert()
        .expect("Vandermonde matrix over distinct points is invertible")
}

/// Row `row` of the systematic `n x k` generator matrix.
fn generator_row(row: usize, k: usize, top_inverse: &Matrix) -> Vec<u8> {
    if row < k {
        let mut unit = vec![0u8; k];
        unit[row] = 1;
        return unit;
    }
    let vander: Vec<u8> = (0..k).map(|c| gf256::pow(row as u8, c)).collect();
    (0..k)
        .map(|c| {
            vander.iter().enumerate().fold(0u8, |acc, (i, &v)| {
                acc ^ gf256::mul(v, top_inverse.get(i, c))
            })
        })
        .collect()
}

fn combine(coeffs: &[u8], shards: &[&[u8]], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for (&c, shard) in coeffs.iter().zip(shards) {
        gf256::mul_acc(&mut out, shard, c);
    }
    out
}

/// Split `file` into `n` chunks, any `k` of which reconstruct it. The first
/// `k` chunks carry the (zero-padded) file bytes verbatim.
pub fn erasure_code(file: &[u8], params: CodingParams) -> Result<Vec<PlainChunk>, CodecError> {
    if file.is_empty() {
        return Err(CodecError::EmptyFile);
    }
    let (k, n) = (params.k, params.n);
    let original_len = file.len() as u64;
    let shard_len = params.shard_len(original_len);

    let mut data: Vec<Vec<u8>> = Vec::with_capacity(k);
    for i in 0..k {
        let start = (i * shard_len).min(file.len());
        let end = ((i + 1) * shard_len).min(file.len());
        let mut shard = file[start..end].to_vec();
        shard.resize(shard_len, 0);
        data.push(shard);
    }

    let top_inverse = vandermonde_top_inverse(k);
    let data_refs: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
    let parity: Vec<Vec<u8>> = (k..n)
        .map(|r| combine(&generator_row(r, k, &top_inverse), &data_refs, shard_len))
        .collect();

    Ok(data
        .into_iter()
        .chain(parity)
        .enumerate()
        .map(|(index, payload)| PlainChunk {
            index: index as u8,
            original_len,
            payload,
        })
        .collect())
}

/// Reconstruct the original file from at least `k` distinct chunks.
///
/// Chunks beyond the `k` used for decoding are re-derived and compared, and
/// padding must decode to zeros; either mismatch is a [`CodecError::DecodeFailure`].
pub fn recover(chunks: &[PlainChunk], params: CodingParams) -> Result<Vec<u8>, CodecError> {
    let (k, n) = (params.k, params.n);
    let Some(first) = chunks.first() else {
        return Err(CodecError::InsufficientChunks { have: 0, need: k });
    };
    let original_len = first.original_len;
    if original_len == 0 {
        return Err(CodecError::InconsistentChunks(
            "original_len of zero".to_string(),
        ));
    }
    let shard_len = params.shard_len(original_len);

    let mut by_index: Vec<Option<&PlainChunk>> = vec![None; n];
    for chunk in chunks {
        if chunk.original_len != original_len {
            return Err(CodecError::InconsistentChunks(format!(
                "original_len {} differs from {}",
                chunk.original_len, original_len
            )));
        }
        if chunk.payload.len() != shard_len {
            return Err(CodecError::InconsistentChunks(format!(
                "chunk {} has {} payload bytes, expected {}",
                chunk.index,
                chunk.payload.len(),
                shard_len
            )));
        }
        let idx = chunk.index as usize;
        if idx >= n {
            return Err(CodecError::InconsistentChunks(format!(
                "chunk index {idx} out of range for n={n}"
            )));
        }
        if by_index[idx].is_some() {
            return Err(CodecError::InconsistentChunks(format!(
                "duplicate chunk index {idx}"
            )));
        }
        by_index[idx] = Some(chunk);
    }

    let present: Vec<&PlainChunk> = by_index.iter().flatten().copied().collect();
    if present.len() < k {
        return Err(CodecError::InsufficientChunks {
            have: present.len(),
            need: k,
        });
    }

    let top_inverse = vandermonde_top_inverse(k);
    let (basis, extra) = present.split_at(k);
    let data: Vec<Vec<u8>> = if basis.iter().enumerate().all(|(i, c)| c.index as usize == i) {
        basis.iter().map(|c| c.payload.clone()).collect()
    } else {
        let rows: Vec<Vec<u8>> = basis
            .iter()
            .map(|c| generator_row(c.index as usize, k, &top_inverse))
            .collect();
        let decode = Matrix::from_rows(&rows)
            .invert()
            .ok_or_else(|| CodecError::DecodeFailure("singular decode matrix".to_string()))?;
        let shards: Vec<&[u8]> = basis.iter().map(|c| c.payload.as_slice()).collect();
        (0..k)
            .map(|j| combine(decode.row(j), &shards, shard_len))
            .collect()
    };

    let data_refs: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
    for chunk in extra {
        let expected = combine(
            &generator_row(chunk.index as usize, k, &top_inverse),
            &data_refs,
            shard_len,
        );
        if expected != chunk.payload {
            return Err(CodecError::DecodeFailure(format!(
                "chunk {} is inconsistent with the others",
                chunk.index
            )));
        }
    }

    let mut file: Vec<u8> = data.concat();
    if file[original_len as usize..].iter().any(|&b| b != 0) {
        return Err(CodecError::DecodeFailure(
            "non-zero padding after decode".to_string(),
        ));
    }
    file.truncate(original_len as usize);
    Ok(file)
}
