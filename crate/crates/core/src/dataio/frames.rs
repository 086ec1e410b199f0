use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};

use super::{io_err, DataError};
use crate::field::{VideoDims, VideoTensor};

fn frame_number(name: &str) -> Option<usize> {
    let stem = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if stem.len() != 5 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Reads `frame_00000.png`, `frame_00001.png`, ... as one video, mapping
/// 8-bit values through `v / 255`.
pub fn read_frame_dir(dir: &Path) -> Result<VideoTensor, DataError> {
    let mut frames = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(n) = entry.file_name().to_str().and_then(frame_number) {
            frames.insert(n, entry.path());
        }
    }
    if frames.is_empty() {
        return Err(DataError::NoFrames(dir.to_path_buf()));
    }
    if let Some(missing) = (0..frames.len()).find(|i| !frames.contains_key(i)) {
        return Err(DataError::MissingFrame(missing));
    }

    let mut pixels = Vec::new();
    let mut size = None;
    for (&index, path) in &frames {
        let img = image::open(path)
            .map_err(|e| DataError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let dims = img.dimensions();
        match size {
            None => size = Some(dims),
            Some(expected) if expected != dims => {
                return Err(DataError::FrameDims {
                    index,
                    expected,
                    got: dims,
                })
            }
            _ => {}
        }
        pixels.extend(img.as_raw().iter().map(|&b| f64::from(b) / 255.0));
    }
    let (w, h) = size.expect("at least one frame");
    let dims = VideoDims::new(frames.len(), h as usize, w as usize)?;
    Ok(VideoTensor::new(dims, pixels)?)
}

/// Writes each frame as an 8-bit PNG, rounding `v · 255`.
pub fn write_frame_dir(dir: &Path, video: &VideoTensor) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let dims = video.dims();
    let frame_len = dims.height * dims.width * 3;
    for (t, frame) in video.pixels().chunks(frame_len).enumerate() {
        let raw: Vec<u8> = frame.iter().map(|v| (v * 255.0).round() as u8).collect();
        let img: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(dims.width as u32, dims.height as u32, raw).expect("frame buffer size");
        let path = dir.join(format!("frame_{t:05}.png"));
        img.save(&path).map_err(|e| DataError::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}
