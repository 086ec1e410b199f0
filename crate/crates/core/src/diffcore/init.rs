//! Seeded parameter initialization.
//!
//! Every random draw in the crate goes through [`stream_rng`]: a ChaCha8
//! generator keyed by a 64-bit seed and a 64-bit stream id. Distinct streams
//! of the same seed are independent, which lets one user-facing seed fan out
//! to many consumers without their draws interfering.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DiffError, Tensor};

/// Name of the generator, recorded in checkpoint metadata.
pub const PRNG_NAME: &str = "chacha8-stream";

pub type Prng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> Prng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a stream id from a label, so call sites can name their streams.
pub fn stream_id(label: &str) -> u64 {
    // FNV-1a, fixed so ids never change between builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// He-uniform: U(-b, b) with b = sqrt(6 / fan_in), fan_in = shape[0].
    UniformFanIn,
    /// U(-bound, bound).
    Uniform(f64),
    /// N(0, sigma²).
    Gaussian(f64),
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::UniformFanIn => write!(f, "uniform-fan-in"),
            InitScheme::Uniform(b) => write!(f, "uniform({b})"),
            InitScheme::Gaussian(s) => write!(f, "gaussian({s})"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "uniform-fan-in" {
            return Ok(InitScheme::UniformFanIn);
        }
        let parse_arg = |prefix: &str| -> Option<f64> {
            s.strip_prefix(prefix)?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        if let Some(sigma) = parse_arg("gaussian(") {
            if sigma >= 0.0 {
                return Ok(InitScheme::Gaussian(sigma));
            }
        }
        if let Some(bound) = parse_arg("uniform(") {
            if bound >= 0.0 {
                return Ok(InitScheme::Uniform(bound));
            }
        }
        Err(DiffError::UnknownScheme(s.to_string()))
    }
}

/// Fills `shape` from the given scheme with a generator keyed by `seed`.
pub fn seeded_init(shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor, DiffError> {
    let mut rng = stream_rng(seed, 0);
    init_from(shape, scheme, &mut rng)
}

/// Same as [`seeded_init`] but draws from a caller-owned generator.
pub fn init_from(shape: &[usize], scheme: InitScheme, rng: &mut Prng) -> Result<Tensor, DiffError> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::UniformFanIn => {
            let fan_in = shape.first().copied().unwrap_or(1).max(1);
            let bound = (6.0 / fan_in as f64).sqrt();
            uniform(n, bound, rng)
        }
        InitScheme::Uniform(bound) => uniform(n, bound, rng),
        InitScheme::Gaussian(sigma) if sigma == 0.0 => vec![0.0; n],
        InitScheme::Gaussian(sigma) => (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    Tensor::new(shape, data)
}

fn uniform(n: usize, bound: f64, rng: &mut Prng) -> Vec<f64> {
    (0..n)
        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = seeded_init(&[7, 5], InitScheme::UniformFanIn, 42).unwrap();
        let b = seeded_init(&[7, 5], InitScheme::UniformFanIn, 42).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = seeded_init(&[7, 5], InitScheme::UniformFanIn, 43).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_sigma_gives_zeros() {
        let t = seeded_init(&[4, 4], InitScheme::Gaussian(0.0), 1).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_moments() {
        let t = seeded_init(&[10_000], InitScheme::Gaussian(1.0), 9).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn uniform_fan_in_respects_bound() {
        let t = seeded_init(&[24, 16], InitScheme::UniformFanIn, 3).unwrap();
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("uniform-fan-in".parse::<InitScheme>().unwrap(), InitScheme::UniformFanIn);
        assert_eq!("gaussian(0.5)".parse::<InitScheme>().unwrap(), InitScheme::Gaussian(0.5));
        assert!(matches!("xavier".parse::<InitScheme>(), Err(DiffError::UnknownScheme(_))));
    }

    #[test]
    fn streams_are_independent() {
        let a: u64 = stream_rng(5, 1).random();
        let b: u64 = stream_rng(5, 2).random();
        assert_ne!(a, b);
        assert_eq!(stream_id("codebook"), stream_id("codebook"));
    }
}
