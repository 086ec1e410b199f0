use std::fs;
use std::path::Path;

use super::{io_err, DataError, Reader};
use crate::hypernet::FRAME_EMBED_DIM;

pub fn encode_embeddings(rows: &[Vec<f64>]) -> Result<Vec<u8>, DataError> {
    if let Some(bad) = rows.iter().find(|r| r.len() != FRAME_EMBED_DIM) {
        return Err(DataError::EmbeddingWidth(bad.len() as u32));
    }
    let mut out = Vec::with_capacity(12 + rows.len() * FRAME_EMBED_DIM * 4);
    out.extend_from_slice(b"EMBF");
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(FRAME_EMBED_DIM as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<Vec<f64>>, DataError> {
    let mut r = Reader::new(bytes, "embedding rows");
    r.magic(b"EMBF")?;
    let rows = r.u32()? as usize;
    let width = r.u32()?;
    if width as usize != FRAME_EMBED_DIM {
        return Err(DataError::EmbeddingWidth(width));
    }
    let payload = r.take(rows * FRAME_EMBED_DIM * 4)?;
    r.finish()?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite("embedding rows".into()));
    }
    Ok(values.chunks(FRAME_EMBED_DIM).map(<[f64]>::to_vec).collect())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    decode_embeddings(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_embeddings(path: &Path, rows: &[Vec<f64>]) -> Result<(), DataError> {
    fs::write(path, encode_embeddings(rows)?).map_err(io_err(path))
}
