//! Reconstruction-quality metrics. Every metric rescales `[0, 1]` pixels to
//! `[0, 255]` exactly once before measuring.

use std::fmt;

use thiserror::Error;

use crate::field::{VideoDims, VideoTensor};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const PEAK: f64 = 255.0;
const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);
/// Recorded in every report.
pub const PIXEL_RANGE: &str = "[0,255]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(VideoDims, VideoDims),
    #[error("frames of {height}x{width} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    FrameTooSmall { height: usize, width: usize },
    #[error("{0} needs at least one element")]
    Empty(&'static str),
    #[error("pixel index {index} out of range for {count} pixels")]
    Index { index: usize, count: usize },
}

fn check_dims(a: &VideoTensor, b: &VideoTensor) -> Result<(), MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared error on the `[0, 255]` scale.
pub fn mse_255(a: &VideoTensor, b: &VideoTensor) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| {
            let d = (x - y) * PEAK;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

pub fn psnr(a: &VideoTensor, b: &VideoTensor) -> Result<f64, MetricError> {
    let mse = mse_255(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable "valid" Gaussian filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * plane[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> f64 {
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(x, h, w, win);
    let mu_y = filter_valid(y, h, w, win);
    let xx = filter_valid(&prod(x, x), h, w, win);
    let yy = filter_valid(&prod(y, y), h, w, win);
    let xy = filter_valid(&prod(x, y), h, w, win);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = xx[i] - mx * mx;
        let sy = yy[i] - my * my;
        let sxy = xy[i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (sx + sy + SSIM_C2));
    }
    total / n as f64
}

/// Mean SSIM over frames and channels (11×11 Gaussian window, σ = 1.5,
/// valid region only).
pub fn ssim(a: &VideoTensor, b: &VideoTensor) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let d = a.dims();
    if d.height < SSIM_WINDOW || d.width < SSIM_WINDOW {
        return Err(MetricError::FrameTooSmall {
            height: d.height,
            width: d.width,
        });
    }
    let win = gaussian_window();
    let plane = |v: &VideoTensor, t: usize, c: usize| -> Vec<f64> {
        let frame = d.height * d.width;
        v.pixels()[3 * t * frame..3 * (t + 1) * frame]
            .iter()
            .skip(c)
            .step_by(3)
            .map(|p| p * PEAK)
            .collect()
    };
    let mut total = 0.0;
    for t in 0..d.frames {
        for c in 0..3 {
            total += ssim_plane(&plane(a, t, c), &plane(b, t, c), d.height, d.width, &win);
        }
    }
    Ok(total / (3 * d.frames) as f64)
}

/// Root of the mean over videos of each video's per-pixel MSE, `[0, 255]`.
pub fn error_e(pairs: &[(&VideoTensor, &VideoTensor)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("error_e"));
    }
    let mut sum = 0.0;
    for (recon, truth) in pairs {
        sum += mse_255(recon, truth)?;
    }
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Mean absolute difference over the given flat pixel indices (all three
/// channels), `[0, 255]`.
pub fn context_l1(pred: &VideoTensor, gt: &VideoTensor, indices: &[usize]) -> Result<f64, MetricError> {
    check_dims(pred, gt)?;
    if indices.is_empty() {
        return Err(MetricError::Empty("context_l1"));
    }
    let count = pred.dims().num_pixels();
    let (p, g) = (pred.pixels(), gt.pixels());
    let mut sum = 0.0;
    for &i in indices {
        if i >= count {
            return Err(MetricError::Index { index: i, count });
        }
        for c in 0..3 {
            sum += ((p[3 * i + c] - g[3 * i + c]) * PEAK).abs();
        }
    }
    Ok(sum / (3 * indices.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Psnr,
    Ssim,
    ErrorE,
    ContextL1,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::ErrorE => "error_e",
            MetricKind::ContextL1 => "context_l1",
        })
    }
}

/// Per-video values and their aggregate. For `error_e` the per-video
/// values are MSEs and the aggregate is the root of their mean; otherwise
/// the aggregate is the plain mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub per_video: Vec<f64>,
    pub aggregate: f64,
    pub pixel_range: &'static str,
}

impl MetricReport {
    pub fn compute(metric: MetricKind, pairs: &[(&VideoTensor, &VideoTensor)]) -> Result<Self, MetricError> {
        if pairs.is_empty() {
            return Err(MetricError::Empty("metric report"));
        }
        let per_video = pairs
            .iter()
            .map(|(a, b)| match metric {
                MetricKind::Psnr => psnr(a, b),
                MetricKind::Ssim => ssim(a, b),
                MetricKind::ErrorE => mse_255(a, b),
                MetricKind::ContextL1 => {
                    let all: Vec<usize> = (0..a.dims().num_pixels()).collect();
                    context_l1(a, b, &all)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_values(metric, per_video))
    }

    pub fn from_values(metric: MetricKind, per_video: Vec<f64>) -> Self {
        let mean = per_video.iter().sum::<f64>() / per_video.len() as f64;
        let aggregate = if metric == MetricKind::ErrorE { mean.sqrt() } else { mean };
        Self {
            metric,
            per_video,
            aggregate,
            pixel_range: PIXEL_RANGE,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,video,value,pixel_range\n");
        for (i, v) in self.per_video.iter().enumerate() {
            out.push_str(&format!("{},{i},{v:?},{}\n", self.metric, self.pixel_range));
        }
        out.push_str(&format!("{},aggregate,{:?},{}\n", self.metric, self.aggregate, self.pixel_range));
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} over {} video(s), pixel range {}: {:.4}",
            self.metric,
            self.per_video.len(),
            self.pixel_range,
            self.aggregate
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::stream_rng;
    use rand::Rng;

    fn dims(t: usize, h: usize, w: usize) -> VideoDims {
        VideoDims::new(t, h, w).unwrap()
    }

    fn random_video(d: VideoDims, seed: u64) -> VideoTensor {
        let mut rng = stream_rng(seed, 0);
        VideoTensor::new(d, (0..d.num_pixels() * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn offset(v: &VideoTensor, by: f64) -> VideoTensor {
        VideoTensor::new(v.dims(), v.pixels().iter().map(|p| p + by).collect()).unwrap()
    }

    /// Direct 2-D window SSIM, no separable filtering.
    fn naive_ssim(a: &VideoTensor, b: &VideoTensor) -> f64 {
        let d = a.dims();
        let mut g = [[0.0; 11]; 11];
        let mut total = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (y, x) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(x * x + y * y) / 4.5).exp();
                total += *v;
            }
        }
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut acc = 0.0;
        let mut count = 0usize;
        for t in 0..d.frames {
            for c in 0..3 {
                let mut plane_sum = 0.0;
                let mut windows = 0usize;
                for i in 0..=d.height - 11 {
                    for j in 0..=d.width - 11 {
                        let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for u in 0..11 {
                            for v in 0..11 {
                                let w = g[u][v] / total;
                                let x = a.rgb(t, i + u, j + v)[c] * 255.0;
                                let y = b.rgb(t, i + u, j + v)[c] * 255.0;
                                mx += w * x;
                                my += w * y;
                                xx += w * x * x;
                                yy += w * y * y;
                                xy += w * x * y;
                            }
                        }
                        let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                        plane_sum += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                            / ((mx * mx + my * my + c1) * (sx + sy + c2));
                        windows += 1;
                    }
                }
                acc += plane_sum / windows as f64;
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn psnr_cases() {
        let v = random_video(dims(2, 4, 4), 1);
        assert_eq!(psnr(&v, &v).unwrap(), 100.0);
        let gray = VideoTensor::filled(dims(2, 4, 4), [0.25; 3]);
        let got = psnr(&gray, &offset(&gray, 16.0 / 255.0)).unwrap();
        assert!((got - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-9);
        // 20·log10(255/16) = 24.04840...; the commonly quoted 24.0486 is a
        // rounding of it, so only agree to that precision.
        assert!((got - 24.0486).abs() < 5e-4);
        let w = random_video(dims(2, 4, 4), 2);
        assert_eq!(psnr(&v, &w).unwrap(), psnr(&w, &v).unwrap());
        assert!(matches!(psnr(&v, &random_video(dims(2, 4, 5), 1)), Err(MetricError::DimMismatch(..))));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let v = random_video(dims(2, 12, 13), 3);
        assert_eq!(ssim(&v, &v).unwrap(), 1.0);
        let w = random_video(dims(2, 12, 13), 4);
        assert!((ssim(&v, &w).unwrap() - ssim(&w, &v).unwrap()).abs() < 1e-15);
        assert!(matches!(
            ssim(&random_video(dims(1, 10, 12), 0), &random_video(dims(1, 10, 12), 1)),
            Err(MetricError::FrameTooSmall { .. })
        ));
    }

    #[test]
    fn ssim_constant_closed_form() {
        let (p, q) = (0.2, 0.7);
        let a = VideoTensor::filled(dims(1, 11, 11), [p; 3]);
        let b = VideoTensor::filled(dims(1, 11, 11), [q; 3]);
        let (m1, m2) = (p * 255.0, q * 255.0);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let expected = (2.0 * m1 * m2 + c1) * c2 / ((m1 * m1 + m2 * m2 + c1) * c2);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_window() {
        for seed in 0..3 {
            let a = random_video(dims(2, 14, 12), seed);
            let b = random_video(dims(2, 14, 12), seed + 100);
            let (got, want) = (ssim(&a, &b).unwrap(), naive_ssim(&a, &b));
            assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn error_e_cases() {
        let v = random_video(dims(1, 3, 3), 5);
        assert_eq!(error_e(&[(&v, &v)]).unwrap(), 0.0);
        let gray = VideoTensor::filled(dims(1, 3, 3), [0.5; 3]);
        let shifted = offset(&gray, 16.0 / 255.0);
        assert!((error_e(&[(&shifted, &gray)]).unwrap() - 16.0).abs() < 1e-9);
        let w = random_video(dims(1, 3, 3), 6);
        assert_eq!(error_e(&[(&v, &w)]).unwrap(), mse_255(&v, &w).unwrap().sqrt());
        assert!(matches!(error_e(&[]), Err(MetricError::Empty(_))));
    }

    #[test]
    fn context_l1_cases() {
        let gray = VideoTensor::filled(dims(2, 3, 3), [0.5; 3]);
        let shifted = offset(&gray, 5.0 / 255.0);
        let idx = [0, 4, 17];
        assert_eq!(context_l1(&gray, &gray, &idx).unwrap(), 0.0);
        assert!((context_l1(&shifted, &gray, &idx).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(
            context_l1(&shifted, &gray, &idx).unwrap(),
            context_l1(&gray, &shifted, &idx).unwrap()
        );
        assert!(context_l1(&gray, &gray, &[]).is_err());
        assert!(matches!(context_l1(&gray, &gray, &[18]), Err(MetricError::Index { .. })));
    }

    #[test]
    fn report_aggregates() {
        let a = random_video(dims(1, 4, 4), 1);
        let b = random_video(dims(1, 4, 4), 2);
        let r = MetricReport::compute(MetricKind::ErrorE, &[(&a, &b), (&b, &b)]).unwrap();
        assert_eq!(r.aggregate, error_e(&[(&a, &b), (&b, &b)]).unwrap());
        assert_eq!(r.pixel_range, "[0,255]");
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        let p = MetricReport::compute(MetricKind::Psnr, &[(&a, &b), (&b, &b)]).unwrap();
        assert_eq!(p.aggregate, (psnr(&a, &b).unwrap() + 100.0) / 2.0);
    }
}
