//! On-disk formats and dataset generation.
//!
//! All binary formats are little-endian with fixed-width fields:
//!
//! * `RVID`: raw video, `f32` pixels.
//! * `INRV`: model checkpoint, named `f64` tensors plus a text metadata block.
//! * `EMBF`: per-frame embeddings, `f32` rows of width 512.

mod bouncing;
mod checkpoint;
mod embedding;
mod frames;
mod rvid;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::field::FieldError;
use crate::hypernet::HypernetError;

pub use bouncing::{
    ball_video, blue_centroid_height, bouncing_ball_params, bouncing_ball_videos, gen_bouncing_ball, BallParams,
    BouncingBallSpec, BALL_COLOR,
};
pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointInfo, CHECKPOINT_VERSION,
};
pub use embedding::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings};
pub use frames::{read_frame_dir, write_frame_dir};
pub use rvid::{decode_rvid, encode_rvid, read_rvid, write_rvid, RVID_HEADER_LEN, RVID_VERSION};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: &'static str,
        found: u16,
        expected: u16,
    },
    #[error("truncated {what}: needed {needed} bytes, {available} available")]
    Truncated {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("zero dimension in header: {0:?}")]
    ZeroDims(Vec<u32>),
    #[error("unsupported channel count {0} (expected 3)")]
    Channels(u32),
    #[error("missing frame {0}")]
    MissingFrame(usize),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    FrameDims {
        index: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("unknown tensor '{0}'")]
    UnknownTensor(String),
    #[error("missing tensor '{0}'")]
    MissingTensor(String),
    #[error("tensor '{0}' appears twice")]
    DuplicateTensor(String),
    #[error("tensor '{name}' has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error("embedding width must be 512, got {0}")]
    EmbeddingWidth(u32),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Hypernet(#[from] HypernetError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sequential little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(DataError::Truncated {
                what: self.what.to_string(),
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), DataError> {
        let found = self.take(4).map_err(|_| DataError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(self.bytes).into_owned(),
        })?;
        if found != expected {
            return Err(DataError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<(), DataError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DataError::TrailingBytes(n)),
        }
    }
}
