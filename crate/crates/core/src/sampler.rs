//! Walking and sampling the space of instance codes, plus latent CSV files.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{stream_id, stream_rng};
use crate::field::{RenderOptions, VideoDims, VideoTensor};
use crate::hypernet::{HypernetError, InrvModel, INSTANCE_DIM};

/// Below this angle (radians) slerp falls back to linear interpolation.
pub const SLERP_MIN_ANGLE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("slerp endpoint has zero norm")]
    ZeroNorm,
    #[error("vector lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("interpolation parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("need at least 2 interpolation steps, got {0}")]
    TooFewSteps(usize),
    #[error("sampling needs at least 2 codes, the model has {0}")]
    TooFewCodes(usize),
    #[error("unknown sampling mode {0:?}")]
    UnknownMode(String),
    #[error("latent file: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Hypernet(#[from] HypernetError),
}

impl From<csv::Error> for SamplerError {
    fn from(e: csv::Error) -> Self {
        SamplerError::Csv(e.to_string())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constant-angular-velocity interpolation between `a` (t = 0) and `b`
/// (t = 1).
pub fn slerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>, SamplerError> {
    if a.len() != b.len() {
        return Err(SamplerError::Length(a.len(), b.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(SamplerError::OutOfRange(t));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(SamplerError::ZeroNorm);
    }
    if t == 0.0 {
        return Ok(a.to_vec());
    }
    if t == 1.0 {
        return Ok(b.to_vec());
    }
    let omega = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos();
    let (wa, wb) = if omega < SLERP_MIN_ANGLE {
        (1.0 - t, t)
    } else {
        let s = omega.sin();
        (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s)
    };
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

/// Renders `steps` videos along the slerp path from code `i` to code `j`.
pub fn interpolate_videos(
    model: &InrvModel,
    i: usize,
    j: usize,
    steps: usize,
    dims: VideoDims,
    opts: RenderOptions,
) -> Result<Vec<VideoTensor>, SamplerError> {
    if steps < 2 {
        return Err(SamplerError::TooFewSteps(steps));
    }
    let (a, b) = (model.instance_code(i)?, model.instance_code(j)?);
    (0..steps)
        .map(|k| {
            let t = k as f64 / (steps - 1) as f64;
            Ok(model.render_latent(&slerp(&a, &b, t)?, dims, opts)?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Slerp between two distinct random training codes at a random t.
    SlerpPairs,
    /// Independent per-dimension Gaussians fitted to the training codes.
    GaussianFit,
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::SlerpPairs => "slerp-pairs",
            SampleMode::GaussianFit => "gaussian-fit",
        })
    }
}

impl FromStr for SampleMode {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slerp-pairs" => Ok(SampleMode::SlerpPairs),
            "gaussian-fit" => Ok(SampleMode::GaussianFit),
            _ => Err(SamplerError::UnknownMode(s.to_string())),
        }
    }
}

/// The training codes and, for Gaussian sampling, their fitted moments.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSpaceModel {
    pub codes: Vec<Vec<f64>>,
    pub mode: SampleMode,
    pub mean: Vec<f64>,
    /// Population standard deviation per dimension.
    pub std: Vec<f64>,
}

impl LatentSpaceModel {
    pub fn fit(codes: Vec<Vec<f64>>, mode: SampleMode) -> Result<Self, SamplerError> {
        if codes.len() < 2 {
            return Err(SamplerError::TooFewCodes(codes.len()));
        }
        let dim = codes[0].len();
        if let Some(bad) = codes.iter().find(|c| c.len() != dim) {
            return Err(SamplerError::Length(dim, bad.len()));
        }
        let n = codes.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|d| codes.iter().map(|c| c[d]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|d| (codes.iter().map(|c| (c[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self { codes, mode, mean, std })
    }

    pub fn from_model(model: &InrvModel, mode: SampleMode) -> Result<Self, SamplerError> {
        Self::fit(model.instance_codes()?, mode)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<SampledLatent>, SamplerError> {
        let mut rng = stream_rng(seed, stream_id("sample-latents"));
        let n = self.codes.len();
        (0..count)
            .map(|_| match self.mode {
                SampleMode::SlerpPairs => {
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    let t = loop {
                        let t: f64 = rng.random();
                        if t > 0.0 {
                            break t;
                        }
                    };
                    Ok(SampledLatent {
                        latent: slerp(&self.codes[i], &self.codes[j], t)?,
                        provenance: Provenance::Slerp { i, j, t },
                    })
                }
                SampleMode::GaussianFit => {
                    let latent = self
                        .mean
                        .iter()
                        .zip(&self.std)
                        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    Ok(SampledLatent {
                        latent,
                        provenance: Provenance::Gaussian,
                    })
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Slerp { i: usize, j: usize, t: f64 },
    Gaussian,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Slerp { i, j, t } => write!(f, "slerp i={i} j={j} t={t}"),
            Provenance::Gaussian => write!(f, "gaussian-fit"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledLatent {
    pub latent: Vec<f64>,
    pub provenance: Provenance,
}

/// Draws `count` new instance codes from the model's training codes.
pub fn sample_latents(
    model: &InrvModel,
    mode: SampleMode,
    count: usize,
    seed: u64,
) -> Result<Vec<SampledLatent>, SamplerError> {
    LatentSpaceModel::from_model(model, mode)?.sample(count, seed)
}

fn latent_header(dim: usize) -> Vec<String> {
    std::iter::once("index".to_string())
        .chain((0..dim).map(|d| format!("m{d}")))
        .collect()
}

/// One row per code: `index,m0,...,m127`. Floats use the shortest decimal
/// form that parses back to the same value.
pub fn write_latents_csv<W: Write>(out: W, codes: &[Vec<f64>]) -> Result<(), SamplerError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(latent_header(INSTANCE_DIM))?;
    for (n, c) in codes.iter().enumerate() {
        if c.len() != INSTANCE_DIM {
            return Err(SamplerError::Length(INSTANCE_DIM, c.len()));
        }
        w.write_record(std::iter::once(n.to_string()).chain(c.iter().map(f64::to_string)))?;
    }
    w.flush().map_err(|source| SamplerError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_latents_csv<R: Read>(input: R) -> Result<Vec<Vec<f64>>, SamplerError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != latent_header(INSTANCE_DIM) {
        return Err(SamplerError::Csv("unexpected header".into()));
    }
    let mut codes = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        if record.get(0) != Some(row.to_string().as_str()) {
            return Err(SamplerError::Csv(format!("row {row} has index {:?}", record.get(0))));
        }
        let code = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| SamplerError::Csv(format!("row {row}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        codes.push(code);
    }
    Ok(codes)
}

pub fn export_latents(model: &InrvModel, path: &Path) -> Result<(), SamplerError> {
    let file = std::fs::File::create(path).map_err(|source| SamplerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_latents_csv(std::io::BufWriter::new(file), &model.instance_codes()?)
}

pub fn import_latents(path: &Path) -> Result<Vec<Vec<f64>>, SamplerError> {
    let file = std::fs::File::open(path).map_err(|source| SamplerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_latents_csv(std::io::BufReader::new(file))
}
