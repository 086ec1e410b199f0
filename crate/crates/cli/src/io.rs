use std::fs;
use std::path::{Path, PathBuf};

use inrv::dataio::{read_embeddings, read_frame_dir, read_rvid, write_frame_dir, write_rvid, DataError};
use inrv::field::VideoTensor;

use crate::error::CliError;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    DataError::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

/// A `.rvid` file or a directory of `frame_NNNNN.png` files.
pub fn load_video(path: &Path) -> Result<VideoTensor, CliError> {
    if path.is_dir() {
        Ok(read_frame_dir(path)?)
    } else {
        Ok(read_rvid(path)?)
    }
}

/// Writes `.rvid` when the path has that extension, a frame directory
/// otherwise.
pub fn save_video(path: &Path, video: &VideoTensor) -> Result<(), CliError> {
    if path.extension().is_some_and(|e| e == "rvid") {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        write_rvid(path, video)?;
    } else {
        write_frame_dir(path, video)?;
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Dataset members in name order: every `.rvid` file in `dir`, or every
/// subdirectory (frame directories) when there are none.
pub fn dataset_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        } else if path.extension().is_some_and(|e| e == "rvid") {
            files.push(path);
        }
    }
    let mut paths = if files.is_empty() { dirs } else { files };
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no .rvid files or frame directories", dir.display())));
    }
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<PathBuf>, Vec<VideoTensor>), CliError> {
    let paths = dataset_paths(dir)?;
    let videos = paths.iter().map(|p| load_video(p)).collect::<Result<_, _>>()?;
    Ok((paths, videos))
}

/// Per-frame embeddings stored as `<emb_dir>/<video stem>.emb`.
pub fn load_embeddings(emb_dir: &Path, video: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let stem = video.file_stem().unwrap_or_default();
    let mut name = stem.to_os_string();
    name.push(".emb");
    Ok(read_embeddings(&emb_dir.join(name))?)
}
