//! Latent optimization against full or partial observations of a video.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use thiserror::Error;

use crate::diffcore::{adam_step, stream_id, stream_rng, AdamState, DiffError, Graph, Tensor};
use crate::field::{mlp_graph, positional_encode, FieldError, RenderOptions, VideoDims, VideoTensor};
use crate::hypernet::{heads_graph, HypernetError, InrvModel, INSTANCE_DIM};
use crate::metrics::{context_l1, MetricError};
use crate::trainer::reconstruction_loss;

pub const DEFAULT_INVERSION_STEPS: usize = 500;
pub const DEFAULT_INVERSION_LR: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("first-k mask needs 1 <= k < T, got k={k} with T={frames}")]
    FramesOutOfRange { k: usize, frames: usize },
    #[error("sparse fraction must be in (0, 1], got {0}")]
    Fraction(f64),
    #[error("low-res grid {low} does not fit inside {high}")]
    GridTooLarge { low: VideoDims, high: VideoDims },
    #[error("observation is {got} but the mask expects {expected}")]
    ObservationDims { expected: VideoDims, got: VideoDims },
    #[error("initial latent has {0} entries, expected {INSTANCE_DIM}")]
    LatentLength(usize),
    #[error("model has no training codes to start from")]
    NoCodes,
    #[error("unknown mask kind {0:?}")]
    UnknownKind(String),
    #[error("inversion diverged at step {step}: {source}")]
    Divergence {
        step: usize,
        #[source]
        source: DiffError,
    },
    #[error("invalid inversion settings: {0}")]
    Config(String),
    #[error(transparent)]
    Hypernet(#[from] HypernetError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which pixels of the observation are visible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskKind {
    Full,
    /// Rows `0..H/2` of every frame.
    TopHalf,
    /// The first `k` frames.
    FirstFrames(usize),
    /// First and last frames.
    Endpoints,
    /// `round(fraction · T·H·W)` pixels drawn without replacement.
    Sparse(f64),
    /// Every pixel of a coarser `height × width` grid over the same volume.
    LowRes { height: usize, width: usize },
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskKind::Full => write!(f, "full"),
            MaskKind::TopHalf => write!(f, "top-half"),
            MaskKind::FirstFrames(k) => write!(f, "first-{k}"),
            MaskKind::Endpoints => write!(f, "endpoints"),
            MaskKind::Sparse(p) => write!(f, "sparse-{p}"),
            MaskKind::LowRes { height, width } => write!(f, "lowres-{height}x{width}"),
        }
    }
}

/// Parses the names printed by `Display`: `full`, `top-half`, `first-4`,
/// `endpoints`, `sparse-0.25`, `lowres-16x16`.
impl FromStr for MaskKind {
    type Err = InversionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || InversionError::UnknownKind(s.to_string());
        Ok(match s {
            "full" => MaskKind::Full,
            "top-half" => MaskKind::TopHalf,
            "endpoints" => MaskKind::Endpoints,
            _ => {
                if let Some(k) = s.strip_prefix("first-") {
                    MaskKind::FirstFrames(k.parse().map_err(|_| unknown())?)
                } else if let Some(p) = s.strip_prefix("sparse-") {
                    MaskKind::Sparse(p.parse().map_err(|_| unknown())?)
                } else if let Some(hw) = s.strip_prefix("lowres-") {
                    let (h, w) = hw.split_once('x').ok_or_else(unknown)?;
                    MaskKind::LowRes {
                        height: h.parse().map_err(|_| unknown())?,
                        width: w.parse().map_err(|_| unknown())?,
                    }
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

/// Visible pixels of an observation of size `dims`, as sorted, unique flat
/// pixel indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMask {
    pub kind: MaskKind,
    /// Size of the observation the indices refer to. For low-res masks this
    /// is the coarse grid, not the full volume.
    pub dims: VideoDims,
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl ContextMask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.indices.iter().map(|&i| self.dims.coord_of(i)).collect()
    }
}

pub fn build_mask(kind: MaskKind, dims: VideoDims, seed: u64) -> Result<ContextMask, InversionError> {
    let plane = dims.height * dims.width;
    let frame_range = |t: usize| t * plane..(t + 1) * plane;
    let (mask_dims, indices): (VideoDims, Vec<usize>) = match kind {
        MaskKind::Full => (dims, (0..dims.num_pixels()).collect()),
        MaskKind::TopHalf => {
            let rows = dims.height / 2;
            let idx = (0..dims.frames)
                .flat_map(|t| (0..rows).flat_map(move |h| (0..dims.width).map(move |w| dims.pixel_index(t, h, w))))
                .collect();
            (dims, idx)
        }
        MaskKind::FirstFrames(k) => {
            if k >= dims.frames {
                return Err(InversionError::FramesOutOfRange { k, frames: dims.frames });
            }
            (dims, (0..k * plane).collect())
        }
        MaskKind::Endpoints => {
            let mut idx: Vec<usize> = frame_range(0).collect();
            if dims.frames > 1 {
                idx.extend(frame_range(dims.frames - 1));
            }
            (dims, idx)
        }
        MaskKind::Sparse(fraction) => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(InversionError::Fraction(fraction));
            }
            let total = dims.num_pixels();
            let count = (fraction * total as f64).round() as usize;
            let mut rng = stream_rng(seed, stream_id("sparse-mask"));
            let mut idx = index::sample(&mut rng, total, count.min(total)).into_vec();
            idx.sort_unstable();
            (dims, idx)
        }
        MaskKind::LowRes { height, width } => {
            let low = VideoDims::new(dims.frames, height, width)?;
            if height > dims.height || width > dims.width {
                return Err(InversionError::GridTooLarge { low, high: dims });
            }
            (low, (0..low.num_pixels()).collect())
        }
    };
    if indices.is_empty() {
        return Err(InversionError::EmptyMask);
    }
    Ok(ContextMask {
        kind,
        dims: mask_dims,
        indices,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    /// Context points per step; `None` uses all of them every step.
    pub pixel_batch: Option<usize>,
    pub seed: u64,
    pub render: RenderOptions,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_INVERSION_STEPS,
            lr: DEFAULT_INVERSION_LR,
            pixel_batch: None,
            seed: 0,
            render: RenderOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub latent: Vec<f64>,
    /// Masked loss before each step, then after the last one
    /// (`steps + 1` entries).
    pub trace: Vec<f64>,
    /// Render at the observation's size.
    pub video: VideoTensor,
    /// Context-L1 of `video` on the mask, `[0, 255]` scale.
    pub context_l1: f64,
}

impl InversionResult {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace has steps + 1 entries")
    }
}

/// Mean of the model's instance codes.
pub fn mean_latent(model: &InrvModel) -> Result<Vec<f64>, InversionError> {
    let codes = model.instance_codes()?;
    if codes.is_empty() {
        return Err(InversionError::NoCodes);
    }
    let mut mean = vec![0.0; INSTANCE_DIM];
    for c in &codes {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    let n = codes.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Mean squared error of the field generated from `latent` over the mask's
/// context points.
pub fn masked_loss(
    model: &InrvModel,
    latent: &[f64],
    observed: &VideoTensor,
    mask: &ContextMask,
) -> Result<f64, InversionError> {
    check_observation(observed, mask)?;
    let features = positional_encode(&mask.coords(), model.profile.field.num_bands)?;
    let target = observed.gather(&mask.indices);
    let mut g = Graph::new();
    let m = g.constant(Tensor::matrix(1, INSTANCE_DIM, latent.to_vec())?);
    let loss = latent_loss_graph(&mut g, model, m, features, target);
    Ok(g.evaluate(loss)?.item())
}

fn latent_loss_graph(
    g: &mut Graph,
    model: &InrvModel,
    latent: crate::diffcore::NodeId,
    features: Tensor,
    target: Tensor,
) -> crate::diffcore::NodeId {
    let heads: Vec<_> = model.hyper.heads.iter().map(|h| h.bind_frozen(g)).collect();
    let batch = heads_graph(g, &heads, &model.layout(), latent);
    let layers = batch.layers(g, 0);
    let f = g.constant(features);
    let pred = mlp_graph(g, f, &layers);
    let t = g.constant(target);
    reconstruction_loss(g, pred, t)
}

fn check_observation(observed: &VideoTensor, mask: &ContextMask) -> Result<(), InversionError> {
    if observed.dims() != mask.dims {
        return Err(InversionError::ObservationDims {
            expected: mask.dims,
            got: observed.dims(),
        });
    }
    Ok(())
}

/// Optimizes an instance code so the generated video matches `observed` on
/// the mask. The network weights stay frozen; only the 128-dim code moves.
/// Starts from `init`, or the mean training code when `None`.
pub fn invert(
    model: &InrvModel,
    observed: &VideoTensor,
    mask: &ContextMask,
    init: Option<&[f64]>,
    config: &InversionConfig,
) -> Result<InversionResult, InversionError> {
    check_observation(observed, mask)?;
    if !(config.lr > 0.0) || config.pixel_batch == Some(0) {
        return Err(InversionError::Config("lr must be > 0 and pixel batch >= 1".into()));
    }
    let start = match init {
        Some(v) if v.len() != INSTANCE_DIM => return Err(InversionError::LatentLength(v.len())),
        Some(v) => v.to_vec(),
        None => mean_latent(model)?,
    };
    let features = positional_encode(&mask.coords(), model.profile.field.num_bands)?;
    let target = observed.gather(&mask.indices);
    let count = mask.len();
    let batch = config.pixel_batch.map_or(count, |b| b.min(count));
    let mut rng = stream_rng(config.seed, stream_id("inversion-pixels"));

    let mut latent = Tensor::matrix(1, INSTANCE_DIM, start)?;
    let mut adam = AdamState::for_params(config.lr, &[&latent]);
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..config.steps {
        let (f, t) = if batch == count {
            (features.clone(), target.clone())
        } else {
            let idx = index::sample(&mut rng, count, batch).into_vec();
            (features.gather_rows(&idx), target.gather_rows(&idx))
        };
        let mut g = Graph::new();
        let m = g.param(latent.clone());
        let loss = latent_loss_graph(&mut g, model, m, f, t);
        let value = g
            .evaluate(loss)
            .map_err(|source| InversionError::Divergence { step, source })?;
        trace.push(value.item());
        let mut grads = g.backward(loss)?;
        let grad = grads.take_or_zeros(m, latent.shape());
        drop(g);
        adam_step(&mut [&mut latent], &[&grad], &mut adam)
            .map_err(|source| InversionError::Divergence { step, source })?;
    }
    let latent = latent.into_vec();
    trace.push(masked_loss(model, &latent, observed, mask)?);
    let video = model.render_latent(&latent, observed.dims(), config.render)?;
    let context_l1 = context_l1(&video, observed, &mask.indices)?;
    Ok(InversionResult {
        latent,
        trace,
        video,
        context_l1,
    })
}

/// Inverts a low-resolution video on its own grid, then renders the found
/// code at `height × width`.
pub fn superresolve(
    model: &InrvModel,
    low: &VideoTensor,
    height: usize,
    width: usize,
    config: &InversionConfig,
) -> Result<(InversionResult, VideoTensor), InversionError> {
    let src = low.dims();
    let target = VideoDims::new(src.frames, height, width)?;
    let mask = build_mask(
        MaskKind::LowRes {
            height: src.height,
            width: src.width,
        },
        target,
        config.seed,
    )?;
    let result = invert(model, low, &mask, None, config)?;
    let video = model.render_latent(&result.latent, target, config.render)?;
    Ok((result, video))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypernet::{ArchProfile, Regularization, SEMANTIC_DIM};
    use crate::trainer::reconstruction_loss_value;

    fn dims(t: usize, h: usize, w: usize) -> VideoDims {
        VideoDims::new(t, h, w).unwrap()
    }

    fn model(codes: usize) -> InrvModel {
        let mut m = InrvModel::new(ArchProfile::custom(2, 8, 8, 8), Regularization::None, 3).unwrap();
        m.register_semantic(vec![vec![0.0; SEMANTIC_DIM]; codes], 1.0).unwrap();
        m
    }

    fn gradient_video(d: VideoDims) -> VideoTensor {
        let mut px = Vec::new();
        for i in 0..d.num_pixels() {
            let [t, h, w] = d.coord_of(i);
            px.extend([0.5 + 0.4 * t * h, 0.5 + 0.3 * w, 0.5 - 0.2 * h]);
        }
        VideoTensor::new(d, px).unwrap()
    }

    #[test]
    fn mask_sizes() {
        let d = dims(4, 8, 8);
        assert_eq!(build_mask(MaskKind::Full, d, 0).unwrap().len(), 256);
        let top = build_mask(MaskKind::TopHalf, d, 0).unwrap();
        assert_eq!(top.len(), 4 * 4 * 8);
        assert!(top.coords().iter().all(|c| c[1] < 0.0));
        assert!(top.indices.iter().all(|&i| (i % 64) / 8 < 4));
        assert_eq!(build_mask(MaskKind::Sparse(0.25), d, 0).unwrap().len(), 64);
        assert_eq!(build_mask(MaskKind::FirstFrames(3), d, 0).unwrap().indices, (0..192).collect::<Vec<_>>());
        let ends = build_mask(MaskKind::Endpoints, d, 0).unwrap();
        assert_eq!(ends.len(), 128);
        assert_eq!(ends.indices[64], 192);
        let low = build_mask(MaskKind::LowRes { height: 2, width: 4 }, d, 0).unwrap();
        assert_eq!(low.dims, dims(4, 2, 4));
        assert_eq!(low.len(), 32);
    }

    #[test]
    fn sparse_mask_is_seeded_and_unique() {
        let d = dims(3, 5, 7);
        let a = build_mask(MaskKind::Sparse(0.3), d, 4).unwrap();
        assert_eq!(a, build_mask(MaskKind::Sparse(0.3), d, 4).unwrap());
        assert_ne!(a.indices, build_mask(MaskKind::Sparse(0.3), d, 5).unwrap().indices);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(*a.indices.last().unwrap() < d.num_pixels());
    }

    #[test]
    fn mask_errors() {
        let d = dims(4, 8, 8);
        assert!(matches!(
            build_mask(MaskKind::FirstFrames(4), d, 0),
            Err(InversionError::FramesOutOfRange { k: 4, frames: 4 })
        ));
        assert!(matches!(build_mask(MaskKind::FirstFrames(0), d, 0), Err(InversionError::EmptyMask)));
        assert!(matches!(build_mask(MaskKind::Sparse(1e-4), d, 0), Err(InversionError::EmptyMask)));
        assert!(matches!(build_mask(MaskKind::Sparse(1.5), d, 0), Err(InversionError::Fraction(_))));
        assert!(matches!(build_mask(MaskKind::TopHalf, dims(2, 1, 4), 0), Err(InversionError::EmptyMask)));
        assert!(matches!(
            build_mask(MaskKind::LowRes { height: 16, width: 8 }, d, 0),
            Err(InversionError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            MaskKind::Full,
            MaskKind::TopHalf,
            MaskKind::FirstFrames(4),
            MaskKind::Endpoints,
            MaskKind::Sparse(0.25),
            MaskKind::LowRes { height: 16, width: 12 },
        ] {
            assert_eq!(kind.to_string().parse::<MaskKind>().unwrap(), kind);
        }
        assert!(matches!("half".parse::<MaskKind>(), Err(InversionError::UnknownKind(_))));
        assert!("first-x".parse::<MaskKind>().is_err());
    }

    #[test]
    fn full_mask_loss_is_the_volume_loss() {
        let m = model(2);
        let video = gradient_video(dims(2, 4, 4));
        let latent = m.instance_code(1).unwrap();
        let mask = build_mask(MaskKind::Full, video.dims(), 0).unwrap();
        let theta = m.theta_for_latent(&latent).unwrap();
        let coords: Vec<[f64; 3]> = (0..32).map(|i| video.dims().coord_of(i)).collect();
        let pred = crate::field::field_forward(&m.profile.field, &theta, &coords).unwrap();
        let want = reconstruction_loss_value(&pred, &video.as_matrix()).unwrap();
        assert_eq!(masked_loss(&m, &latent, &video, &mask).unwrap().to_bits(), want.to_bits());
    }

    #[test]
    fn known_latent_is_a_fixed_point() {
        let mut m = model(3);
        // Keep the output layer near 0.5 so the render is not clamped.
        let (in_dim, _) = m.layout().layer_dims()[3];
        let last = m.hyper.heads[3].layers.last_mut().unwrap();
        last.weight.data_mut().iter_mut().for_each(|v| *v *= 0.01);
        for (k, b) in last.bias.data_mut().iter_mut().enumerate() {
            *b = if k < in_dim * 3 { *b * 0.01 } else { 0.5 };
        }
        let latent = m.instance_code(2).unwrap();
        let observed = m.render_latent(&latent, dims(2, 4, 4), RenderOptions::default()).unwrap();
        assert!(observed.pixels().iter().all(|&v| v > 0.0 && v < 1.0), "render is clamped");
        let mask = build_mask(MaskKind::Full, observed.dims(), 0).unwrap();
        let config = InversionConfig {
            steps: 5,
            ..InversionConfig::default()
        };
        let r = invert(&m, &observed, &mask, Some(&latent), &config).unwrap();
        assert_eq!(r.initial_loss(), 0.0);
        assert_eq!(r.latent, latent);
        assert_eq!(r.context_l1, 0.0);
    }

    #[test]
    fn inversion_reduces_masked_loss_and_freezes_model() {
        let m = model(3);
        let before = m.clone();
        let observed = gradient_video(dims(3, 4, 4));
        for kind in [MaskKind::Full, MaskKind::TopHalf, MaskKind::FirstFrames(1), MaskKind::Endpoints, MaskKind::Sparse(0.5)] {
            let mask = build_mask(kind, observed.dims(), 1).unwrap();
            let config = InversionConfig {
                steps: 30,
                ..InversionConfig::default()
            };
            let r = invert(&m, &observed, &mask, None, &config).unwrap();
            assert_eq!(r.trace.len(), 31);
            assert!(r.trace.iter().all(|v| v.is_finite()));
            assert!(r.final_loss() < r.initial_loss(), "{kind}: {:?}", r.trace);
            assert_eq!(r.video.dims(), observed.dims());
            assert_eq!(r, invert(&m, &observed, &mask, None, &config).unwrap());
        }
        assert_eq!(m, before);
    }

    #[test]
    fn starts_from_mean_code() {
        let m = model(4);
        let mean = mean_latent(&m).unwrap();
        let codes = m.instance_codes().unwrap();
        for d in [0, 17, 127] {
            let want = codes.iter().map(|c| c[d]).sum::<f64>() / 4.0;
            assert!((mean[d] - want).abs() < 1e-15);
        }
        let observed = gradient_video(dims(1, 2, 2));
        let mask = build_mask(MaskKind::Full, observed.dims(), 0).unwrap();
        let config = InversionConfig {
            steps: 0,
            ..InversionConfig::default()
        };
        assert_eq!(invert(&m, &observed, &mask, None, &config).unwrap().latent, mean);
        assert!(matches!(mean_latent(&model(0)), Err(InversionError::NoCodes)));
    }

    #[test]
    fn minibatched_inversion_is_deterministic() {
        let m = model(2);
        let observed = gradient_video(dims(2, 4, 4));
        let mask = build_mask(MaskKind::Full, observed.dims(), 0).unwrap();
        let config = InversionConfig {
            steps: 10,
            pixel_batch: Some(8),
            seed: 6,
            ..InversionConfig::default()
        };
        let a = invert(&m, &observed, &mask, None, &config).unwrap();
        assert_eq!(a, invert(&m, &observed, &mask, None, &config).unwrap());
        let other = InversionConfig { seed: 7, ..config };
        assert_ne!(a.latent, invert(&m, &observed, &mask, None, &other).unwrap().latent);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let m = model(1);
        let observed = gradient_video(dims(2, 4, 4));
        let mask = build_mask(MaskKind::Full, dims(2, 4, 5), 0).unwrap();
        assert!(matches!(
            invert(&m, &observed, &mask, None, &InversionConfig::default()),
            Err(InversionError::ObservationDims { .. })
        ));
        let mask = build_mask(MaskKind::Full, observed.dims(), 0).unwrap();
        assert!(matches!(
            invert(&m, &observed, &mask, Some(&[0.0; 3]), &InversionConfig::default()),
            Err(InversionError::LatentLength(3))
        ));
    }

    #[test]
    fn superresolve_renders_at_target_size() {
        let m = model(2);
        let low = gradient_video(dims(2, 4, 4));
        let config = InversionConfig {
            steps: 3,
            ..InversionConfig::default()
        };
        let (r, high) = superresolve(&m, &low, 32, 32, &config).unwrap();
        assert_eq!(high.dims(), dims(2, 32, 32));
        assert_eq!(r.video.dims(), low.dims());
        // Same size: the super-resolved video is the inversion's own render.
        let (r, same) = superresolve(&m, &low, 4, 4, &config).unwrap();
        assert_eq!(same, r.video);
        let mask = build_mask(MaskKind::Full, low.dims(), config.seed).unwrap();
        assert_eq!(r, invert(&m, &low, &mask, None, &config).unwrap());
        assert!(matches!(superresolve(&m, &low, 2, 8, &config), Err(InversionError::GridTooLarge { .. })));
    }
}
