use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{io_err, DataError, Reader};
use crate::diffcore::PRNG_NAME;
use crate::field::{FieldArch, VideoDims};
use crate::hypernet::{ArchProfile, InrvModel, LatentCodebook, Regularization, CONTEXT_DIM, SEMANTIC_DIM};

pub const CHECKPOINT_VERSION: u16 = 1;

const CONTEXT_TENSOR: &str = "codebook.context";
const SEMANTIC_TENSOR: &str = "codebook.semantic";

const META_KEYS: [&str; 12] = [
    "profile",
    "num_bands",
    "field_hidden",
    "head_hidden",
    "fusion_hidden",
    "dims",
    "num_codes",
    "seed",
    "prng",
    "regularization",
    "stage",
    "config_hash",
];

/// Run-level facts stored next to the weights.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CheckpointInfo {
    /// Training video dims, if the model was trained on a fixed size.
    pub dims: Option<VideoDims>,
    /// 1-based progressive stage that produced the checkpoint; 0 if untrained.
    pub stage: usize,
    /// Hex SHA-256 of the resolved run configuration.
    pub config_hash: String,
}

/// Hex SHA-256 of a resolved configuration text.
pub fn config_hash(resolved: &str) -> String {
    Sha256::digest(resolved.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn metadata(model: &InrvModel, info: &CheckpointInfo) -> String {
    let p = &model.profile;
    let dims = info.dims.map_or_else(|| "none".to_string(), |d| d.to_string());
    let values = [
        p.name.clone(),
        p.field.num_bands.to_string(),
        p.field.hidden_width.to_string(),
        p.head_hidden.to_string(),
        p.fusion_hidden.to_string(),
        dims,
        model.num_codes().to_string(),
        model.seed.to_string(),
        PRNG_NAME.to_string(),
        model.regularization.to_string(),
        info.stage.to_string(),
        info.config_hash.clone(),
    ];
    META_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &InrvModel, info: &CheckpointInfo) -> Vec<u8> {
    let meta = metadata(model, info);
    let weights = model.named_weights();
    let mut out = Vec::new();
    out.extend_from_slice(b"INRV");
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, meta.len());
    out.extend_from_slice(meta.as_bytes());
    put_u32(&mut out, weights.len() + 2);
    for (name, t) in &weights {
        put_tensor(&mut out, name, t.shape(), t.data().iter().copied());
    }
    let n = model.num_codes();
    let book = &model.codebook;
    put_tensor(
        &mut out,
        CONTEXT_TENSOR,
        &[n, CONTEXT_DIM],
        book.context_rows().iter().flatten().copied(),
    );
    put_tensor(
        &mut out,
        SEMANTIC_TENSOR,
        &[n, SEMANTIC_DIM],
        book.semantic_rows().iter().flatten().copied(),
    );
    out
}

fn parse_metadata(text: &str) -> Result<BTreeMap<&str, &str>, DataError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Metadata(format!("malformed line '{line}'")))?;
        if !META_KEYS.contains(&k) {
            return Err(DataError::Metadata(format!("unknown key '{k}'")));
        }
        if map.insert(k, v).is_some() {
            return Err(DataError::Metadata(format!("duplicate key '{k}'")));
        }
    }
    if let Some(missing) = META_KEYS.iter().find(|k| !map.contains_key(*k)) {
        return Err(DataError::Metadata(format!("missing key '{missing}'")));
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T, DataError> {
    map[key]
        .parse()
        .map_err(|_| DataError::Metadata(format!("bad value for '{key}': '{}'", map[key])))
}

fn parse_dims(s: &str) -> Result<Option<VideoDims>, DataError> {
    if s == "none" {
        return Ok(None);
    }
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| DataError::Metadata(format!("bad dims '{s}'"))))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [t, h, w] => Ok(Some(VideoDims::new(t, h, w)?)),
        _ => Err(DataError::Metadata(format!("bad dims '{s}'"))),
    }
}

struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn read_tensor(r: &mut Reader<'_>) -> Result<(String, RawTensor), DataError> {
    let name_len = r.u32()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| DataError::Metadata("tensor name is not UTF-8".into()))?;
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let count = shape.iter().product::<usize>();
    let bytes = r.take(count.checked_mul(8).ok_or_else(|| DataError::Inconsistent(format!("tensor '{name}' too large")))?)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite(format!("tensor '{name}'")));
    }
    Ok((name, RawTensor { shape, data }))
}

fn codebook_rows(raw: &RawTensor, name: &str, n: usize, width: usize) -> Result<Vec<Vec<f64>>, DataError> {
    if raw.shape.len() != 2 || raw.shape[1] != width {
        return Err(DataError::TensorShape {
            name: name.to_string(),
            expected: vec![n, width],
            got: raw.shape.clone(),
        });
    }
    if raw.shape[0] != n {
        return Err(DataError::Inconsistent(format!(
            "metadata declares {n} codes but '{name}' has {} rows",
            raw.shape[0]
        )));
    }
    Ok(raw.data.chunks(width).map(<[f64]>::to_vec).collect())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(InrvModel, CheckpointInfo), DataError> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(b"INRV")?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::Version {
            format: "INRV",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| DataError::Metadata("metadata is not UTF-8".into()))?;
    let map = parse_metadata(meta)?;

    if map["prng"] != PRNG_NAME {
        return Err(DataError::Metadata(format!(
            "unsupported prng '{}' (expected '{PRNG_NAME}')",
            map["prng"]
        )));
    }
    let widths: [usize; 4] = [
        parse_num(&map, "num_bands")?,
        parse_num(&map, "field_hidden")?,
        parse_num(&map, "head_hidden")?,
        parse_num(&map, "fusion_hidden")?,
    ];
    if widths.contains(&0) {
        return Err(DataError::Metadata("zero network width".into()));
    }
    let profile = ArchProfile {
        name: map["profile"].to_string(),
        field: FieldArch::new(widths[0], widths[1]),
        head_hidden: widths[2],
        fusion_hidden: widths[3],
    };
    let regularization: Regularization = map["regularization"].parse()?;
    let seed: u64 = parse_num(&map, "seed")?;
    let num_codes: usize = parse_num(&map, "num_codes")?;
    let info = CheckpointInfo {
        dims: parse_dims(map["dims"])?,
        stage: parse_num(&map, "stage")?,
        config_hash: map["config_hash"].to_string(),
    };

    let mut model = InrvModel::skeleton(profile, regularization, seed);
    let count = r.u32()? as usize;
    let mut seen: BTreeMap<String, RawTensor> = BTreeMap::new();
    {
        let expected: BTreeMap<String, Vec<usize>> = model
            .named_weights()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for _ in 0..count {
            let (name, raw) = read_tensor(&mut r)?;
            let known = expected.contains_key(&name) || name == CONTEXT_TENSOR || name == SEMANTIC_TENSOR;
            if !known {
                return Err(DataError::UnknownTensor(name));
            }
            if seen.contains_key(&name) {
                return Err(DataError::DuplicateTensor(name));
            }
            if let Some(shape) = expected.get(&name) {
                if *shape != raw.shape {
                    return Err(DataError::TensorShape {
                        name,
                        expected: shape.clone(),
                        got: raw.shape,
                    });
                }
            }
            seen.insert(name, raw);
        }
    }
    r.finish()?;

    for (name, tensor) in model.named_weights_mut() {
        let raw = seen.remove(&name).ok_or(DataError::MissingTensor(name))?;
        tensor.data_mut().copy_from_slice(&raw.data);
    }
    let context = seen
        .remove(CONTEXT_TENSOR)
        .ok_or_else(|| DataError::MissingTensor(CONTEXT_TENSOR.into()))?;
    let semantic = seen
        .remove(SEMANTIC_TENSOR)
        .ok_or_else(|| DataError::MissingTensor(SEMANTIC_TENSOR.into()))?;
    model.codebook = LatentCodebook::from_parts(
        codebook_rows(&context, CONTEXT_TENSOR, num_codes, CONTEXT_DIM)?,
        codebook_rows(&semantic, SEMANTIC_TENSOR, num_codes, SEMANTIC_DIM)?,
    )?;
    Ok((model, info))
}

pub fn write_checkpoint(path: &Path, model: &InrvModel, info: &CheckpointInfo) -> Result<(), DataError> {
    fs::write(path, encode_checkpoint(model, info)).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<(InrvModel, CheckpointInfo), DataError> {
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}
