use std::fs;
use std::path::Path;

use super::{io_err, DataError, Reader};
use crate::field::{VideoDims, VideoTensor};

pub const RVID_VERSION: u16 = 1;
/// magic (4) + version (2) + T, H, W, C (4 × 4)
pub const RVID_HEADER_LEN: usize = 22;

pub fn encode_rvid(video: &VideoTensor) -> Vec<u8> {
    let dims = video.dims();
    let mut out = Vec::with_capacity(RVID_HEADER_LEN + video.pixels().len() * 4);
    out.extend_from_slice(b"RVID");
    out.extend_from_slice(&RVID_VERSION.to_le_bytes());
    for d in [dims.frames, dims.height, dims.width, 3] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in video.pixels() {
        out.extend_from_slice(&(v.clamp(0.0, 1.0) as f32).to_le_bytes());
    }
    out
}

pub fn decode_rvid(bytes: &[u8]) -> Result<VideoTensor, DataError> {
    let mut r = Reader::new(bytes, "rvid payload");
    r.magic(b"RVID")?;
    let version = r.u16()?;
    if version != RVID_VERSION {
        return Err(DataError::Version {
            format: "RVID",
            found: version,
            expected: RVID_VERSION,
        });
    }
    let header = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    if header.contains(&0) {
        return Err(DataError::ZeroDims(header.to_vec()));
    }
    let [t, h, w, c] = header;
    if c != 3 {
        return Err(DataError::Channels(c));
    }
    let dims = VideoDims::new(t as usize, h as usize, w as usize)?;
    let count = dims.num_pixels() * 3;
    let payload = r.take(count * 4)?;
    r.finish()?;
    let pixels = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect::<Vec<_>>();
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite("rvid payload".into()));
    }
    Ok(VideoTensor::new(dims, pixels)?)
}

pub fn write_rvid(path: &Path, video: &VideoTensor) -> Result<(), DataError> {
    fs::write(path, encode_rvid(video)).map_err(io_err(path))
}

pub fn read_rvid(path: &Path) -> Result<VideoTensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_rvid(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{seeded_init, InitScheme};

    fn random_video() -> VideoTensor {
        let dims = VideoDims::new(2, 4, 4).unwrap();
        let t = seeded_init(&[dims.num_pixels() * 3], InitScheme::Uniform(1.0), 3).unwrap();
        let pixels = t.data().iter().map(|v| v.abs()).collect();
        VideoTensor::new(dims, pixels).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let bytes = encode_rvid(&random_video());
        let decoded = decode_rvid(&bytes).unwrap();
        assert_eq!(encode_rvid(&decoded), bytes);
        for (a, b) in random_video().pixels().iter().zip(decoded.pixels()) {
            assert!((a - b).abs() <= a.abs() * 2f64.powi(-23));
        }
    }

    #[test]
    fn single_pixel_size() {
        let v = VideoTensor::filled(VideoDims::new(1, 1, 1).unwrap(), [0.2, 0.4, 0.6]);
        assert_eq!(encode_rvid(&v).len(), RVID_HEADER_LEN + 12);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_rvid(&random_video());
        bytes[0] = b'X';
        assert!(matches!(decode_rvid(&bytes), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn truncation_and_trailing_rejected() {
        let bytes = encode_rvid(&random_video());
        assert!(matches!(
            decode_rvid(&bytes[..bytes.len() - 1]),
            Err(DataError::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_rvid(&longer), Err(DataError::TrailingBytes(1))));
    }

    #[test]
    fn zero_dims_rejected() {
        let mut bytes = encode_rvid(&random_video());
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_rvid(&bytes), Err(DataError::ZeroDims(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rvid");
        let v = random_video();
        write_rvid(&path, &v).unwrap();
        let back = read_rvid(&path).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert!(read_rvid(&dir.path().join("missing.rvid")).is_err());
    }
}
