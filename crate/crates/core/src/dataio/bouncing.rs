//! Synthetic BouncingBall dataset: a blue disc moving horizontally on a white
//! background, one fixed height per video.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::{io_err, write_rvid, DataError};
use crate::diffcore::{stream_id, stream_rng};
use crate::field::{VideoDims, VideoTensor};

pub const BALL_COLOR: [f64; 3] = [0.1, 0.2, 0.9];
const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
/// Fraction of the frame height spanned by the ball centres.
const HEIGHT_BAND: f64 = 0.7;
/// Sub-samples per pixel axis for anti-aliasing.
const SUPERSAMPLE: usize = 4;
/// Pixels whose red-channel drop is below this do not count as ball.
const CENTROID_FLOOR: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BouncingBallSpec {
    pub count: usize,
    pub size: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for BouncingBallSpec {
    fn default() -> Self {
        Self {
            count: 50,
            size: 100,
            frames: 25,
            seed: 0,
        }
    }
}

/// Geometry of one video. Positions are fractions of the frame size so the
/// same ball can be drawn at any resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallParams {
    pub size: usize,
    pub frames: usize,
    /// Vertical centre as a fraction of the frame height.
    pub height: f64,
    /// Initial horizontal centre as a fraction of the frame width.
    pub x0: f64,
    /// +1 moves right first, −1 left.
    pub direction: f64,
}

impl BallParams {
    pub fn radius(&self) -> f64 {
        self.size as f64 / 12.0
    }

    /// Pixels travelled per frame.
    pub fn speed(&self) -> f64 {
        1.5 * self.size as f64 / self.frames as f64
    }

    /// Same ball drawn on a different canvas size.
    pub fn at_size(self, size: usize) -> Self {
        Self { size, ..self }
    }

    /// Horizontal centre in pixels at frame `t`, reflected elastically
    /// between the walls.
    pub fn center_x(&self, t: usize) -> f64 {
        let r = self.radius();
        let span = self.size as f64 - 2.0 * r;
        let start = self.x0 * self.size as f64 - r;
        let u = (start + self.direction * self.speed() * t as f64).rem_euclid(2.0 * span);
        let folded = if u > span { 2.0 * span - u } else { u };
        r + folded
    }

    pub fn center_y(&self) -> f64 {
        self.height * self.size as f64
    }
}

/// Ball heights equally spaced over the middle band of the frame.
pub fn height_fraction(index: usize, count: usize) -> f64 {
    let low = (1.0 - HEIGHT_BAND) / 2.0;
    if count <= 1 {
        0.5
    } else {
        low + HEIGHT_BAND * index as f64 / (count - 1) as f64
    }
}

pub fn bouncing_ball_params(spec: &BouncingBallSpec) -> Vec<BallParams> {
    (0..spec.count)
        .map(|n| {
            let mut rng = stream_rng(spec.seed, stream_id("bouncing-ball").wrapping_add(n as u64));
            let r_frac = 1.0 / 12.0;
            let x0 = r_frac + (1.0 - 2.0 * r_frac) * rng.random::<f64>();
            let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
            BallParams {
                size: spec.size,
                frames: spec.frames,
                height: height_fraction(n, spec.count),
                x0,
                direction,
            }
        })
        .collect()
}

pub fn ball_video(p: &BallParams) -> VideoTensor {
    let dims = VideoDims::new(p.frames, p.size, p.size).expect("positive ball dims");
    let r = p.radius();
    let r2 = r * r;
    let cy = p.center_y();
    let mut pixels = Vec::with_capacity(dims.num_pixels() * 3);
    for t in 0..p.frames {
        let cx = p.center_x(t);
        for i in 0..p.size {
            for j in 0..p.size {
                let mut inside = 0usize;
                for a in 0..SUPERSAMPLE {
                    let y = i as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64;
                    for b in 0..SUPERSAMPLE {
                        let x = j as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64;
                        if (x - cx).powi(2) + (y - cy).powi(2) <= r2 {
                            inside += 1;
                        }
                    }
                }
                let cover = inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for c in 0..3 {
                    pixels.push((1.0 - cover) * BACKGROUND[c] + cover * BALL_COLOR[c]);
                }
            }
        }
    }
    VideoTensor::new(dims, pixels).expect("colours in range")
}

pub fn bouncing_ball_videos(spec: &BouncingBallSpec) -> Vec<(BallParams, VideoTensor)> {
    bouncing_ball_params(spec)
        .into_iter()
        .map(|p| (p, ball_video(&p)))
        .collect()
}

/// Vertical centroid (in pixels, measured to pixel centres) of ball-coloured
/// pixels in frame `t`, weighting each pixel by how far its red channel
/// drops below white. `None` when no pixel qualifies.
pub fn blue_centroid_height(video: &VideoTensor, t: usize) -> Option<f64> {
    let dims = video.dims();
    let (mut mass, mut moment) = (0.0, 0.0);
    for h in 0..dims.height {
        for w in 0..dims.width {
            let drop = 1.0 - video.rgb(t, h, w)[0];
            if drop >= CENTROID_FLOOR {
                mass += drop;
                moment += drop * (h as f64 + 0.5);
            }
        }
    }
    (mass > 0.0).then(|| moment / mass)
}

/// Writes `video_0000.rvid`, ... and a `dataset.txt` describing the geometry.
pub fn gen_bouncing_ball(spec: &BouncingBallSpec, dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "dataset=bouncing-ball");
    let _ = writeln!(meta, "count={}", spec.count);
    let _ = writeln!(meta, "size={}", spec.size);
    let _ = writeln!(meta, "frames={}", spec.frames);
    let _ = writeln!(meta, "seed={}", spec.seed);
    let _ = writeln!(meta, "radius_px={}", spec.size as f64 / 12.0);
    let _ = writeln!(meta, "ball_rgb={},{},{}", BALL_COLOR[0], BALL_COLOR[1], BALL_COLOR[2]);
    let _ = writeln!(meta, "background_rgb=1,1,1");
    let _ = writeln!(meta, "speed_px_per_frame={}", 1.5 * spec.size as f64 / spec.frames as f64);
    let _ = writeln!(meta, "height_band={HEIGHT_BAND}");
    let _ = writeln!(meta, "antialias={SUPERSAMPLE}x{SUPERSAMPLE}-supersampling");

    let mut paths = Vec::with_capacity(spec.count);
    for (n, (p, video)) in bouncing_ball_videos(spec).into_iter().enumerate() {
        let path = dir.join(format!("video_{n:04}.rvid"));
        write_rvid(&path, &video)?;
        let _ = writeln!(
            meta,
            "video_{n:04}=height:{},x0:{},direction:{}",
            p.height, p.x0, p.direction
        );
        paths.push(path);
    }
    let meta_path = dir.join("dataset.txt");
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;
    Ok(paths)
}
