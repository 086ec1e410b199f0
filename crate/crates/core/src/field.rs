//! The per-video implicit function: a coordinate MLP mapping an encoded
//! `(t, h, w)` position to RGB.

use std::f64::consts::PI;

use thiserror::Error;

use crate::diffcore::{DiffError, Graph, NodeId, Tensor};

pub const FIELD_HIDDEN_LAYERS: usize = 3;
pub const FIELD_OUT_DIM: usize = 3;
pub const FIELD_LAYERS: usize = FIELD_HIDDEN_LAYERS + 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("coordinate {value} on row {row} lies outside [-1, 1]")]
    CoordinateOutOfRange { row: usize, value: f64 },
    #[error("video extents must be positive, got {0}x{1}x{2}")]
    ZeroExtent(usize, usize, usize),
    #[error("theta has {got} values but the layout needs {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("pixel {index} = {value} is outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Shape of the coordinate network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldArch {
    pub num_bands: usize,
    pub hidden_width: usize,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self {
            num_bands: 8,
            hidden_width: 256,
        }
    }
}

impl FieldArch {
    pub fn new(num_bands: usize, hidden_width: usize) -> Self {
        assert!(num_bands > 0 && hidden_width > 0);
        Self {
            num_bands,
            hidden_width,
        }
    }

    pub fn input_dim(&self) -> usize {
        6 * self.num_bands
    }

    /// `(fan_in, fan_out)` of each layer, input layer first.
    pub fn layer_dims(&self) -> [(usize, usize); FIELD_LAYERS] {
        let h = self.hidden_width;
        [
            (self.input_dim(), h),
            (h, h),
            (h, h),
            (h, FIELD_OUT_DIM),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Weight,
    Bias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub layer: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

/// Where each layer's weights and bias live inside a flat theta vector.
///
/// Weights are stored row-major as `[fan_in, fan_out]`, followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaLayout {
    pub segments: Vec<Segment>,
    pub total_len: usize,
    dims: [(usize, usize); FIELD_LAYERS],
}

impl ThetaLayout {
    pub fn layer_dims(&self) -> &[(usize, usize); FIELD_LAYERS] {
        &self.dims
    }

    /// Offset and length of a whole layer (weight then bias).
    pub fn layer_span(&self, layer: usize) -> (usize, usize) {
        let (i, o) = self.dims[layer];
        (self.segments[2 * layer].offset, i * o + o)
    }
}

pub fn layout_theta(arch: &FieldArch) -> ThetaLayout {
    let dims = arch.layer_dims();
    let mut segments = Vec::with_capacity(2 * FIELD_LAYERS);
    let mut offset = 0;
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        for (kind, len) in [
            (SegmentKind::Weight, fan_in * fan_out),
            (SegmentKind::Bias, fan_out),
        ] {
            segments.push(Segment {
                layer,
                kind,
                offset,
                len,
            });
            offset += len;
        }
    }
    ThetaLayout {
        segments,
        total_len: offset,
        dims,
    }
}

/// Coordinate of sample `i` of `n` on an axis: inclusive linspace over
/// [-1, 1], or 0 for a single sample.
pub fn axis_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else if i + 1 == n {
        1.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoDims {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self, FieldError> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(FieldError::ZeroExtent(frames, height, width));
        }
        Ok(Self {
            frames,
            height,
            width,
        })
    }

    pub fn num_pixels(&self) -> usize {
        self.frames * self.height * self.width
    }

    /// Flat pixel index of `(t, h, w)` in t-major order.
    pub fn pixel_index(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.height + h) * self.width + w
    }

    pub fn coord(&self, t: usize, h: usize, w: usize) -> [f64; 3] {
        [
            axis_coord(t, self.frames),
            axis_coord(h, self.height),
            axis_coord(w, self.width),
        ]
    }

    /// Coordinate of a flat pixel index.
    pub fn coord_of(&self, index: usize) -> [f64; 3] {
        let w = index % self.width;
        let h = (index / self.width) % self.height;
        let t = index / (self.width * self.height);
        self.coord(t, h, w)
    }
}

impl std::fmt::Display for VideoDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.frames, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateGrid {
    pub dims: VideoDims,
    pub coords: Vec<[f64; 3]>,
}

pub fn make_grid(frames: usize, height: usize, width: usize) -> Result<CoordinateGrid, FieldError> {
    let dims = VideoDims::new(frames, height, width)?;
    let coords = (0..dims.num_pixels()).map(|i| dims.coord_of(i)).collect();
    Ok(CoordinateGrid { dims, coords })
}

/// Sin/cos features: for each axis, then each band `k`, then `(sin, cos)` of
/// `2^k·π·x`.
pub fn positional_encode(coords: &[[f64; 3]], num_bands: usize) -> Result<Tensor, FieldError> {
    let width = 6 * num_bands;
    let mut out = Vec::with_capacity(coords.len() * width);
    for (row, c) in coords.iter().enumerate() {
        for &x in c {
            if !(-1.0..=1.0).contains(&x) {
                return Err(FieldError::CoordinateOutOfRange { row, value: x });
            }
            let mut freq = PI;
            for _ in 0..num_bands {
                out.push((freq * x).sin());
                out.push((freq * x).cos());
                freq *= 2.0;
            }
        }
    }
    Ok(Tensor::new(&[coords.len(), width], out)?)
}

/// Graph handles for one field layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Slices a flat theta node into per-layer weight and bias views.
pub fn bind_theta(g: &mut Graph, layout: &ThetaLayout, theta: NodeId) -> Vec<LayerNodes> {
    bind_theta_at(g, layout, theta, 0)
}

/// Like [`bind_theta`], for a theta that starts `base` elements into `source`.
pub fn bind_theta_at(g: &mut Graph, layout: &ThetaLayout, source: NodeId, base: usize) -> Vec<LayerNodes> {
    layout
        .layer_dims()
        .iter()
        .enumerate()
        .map(|(layer, &(i, o))| {
            let (offset, _) = layout.layer_span(layer);
            LayerNodes {
                weight: g.slice(source, base + offset, &[i, o]),
                bias: g.slice(source, base + offset + i * o, &[o]),
            }
        })
        .collect()
}

/// ReLU MLP with a linear last layer; returns the output node.
pub fn mlp_graph(g: &mut Graph, features: NodeId, layers: &[LayerNodes]) -> NodeId {
    let mut x = features;
    for (i, layer) in layers.iter().enumerate() {
        let z = g.matmul(x, layer.weight);
        let z = g.broadcast_add(z, layer.bias);
        x = if i + 1 < layers.len() { g.relu(z) } else { z };
    }
    x
}

fn check_theta(layout: &ThetaLayout, theta: &Tensor) -> Result<(), FieldError> {
    if theta.numel() != layout.total_len {
        return Err(FieldError::ThetaLength {
            expected: layout.total_len,
            got: theta.numel(),
        });
    }
    Ok(())
}

/// Raw (unclamped) field outputs at `coords`, shape `[N, 3]`.
pub fn field_forward(arch: &FieldArch, theta: &Tensor, coords: &[[f64; 3]]) -> Result<Tensor, FieldError> {
    let layout = layout_theta(arch);
    check_theta(&layout, theta)?;
    let features = positional_encode(coords, arch.num_bands)?;
    forward_features(&layout, theta, features)
}

fn forward_features(layout: &ThetaLayout, theta: &Tensor, features: Tensor) -> Result<Tensor, FieldError> {
    let mut g = Graph::new();
    let t = g.constant(theta.clone());
    let layers = bind_theta(&mut g, layout, t);
    let f = g.constant(features);
    let out = mlp_graph(&mut g, f, &layers);
    Ok(g.evaluate(out)?.clone())
}

/// Dense `T×H×W×3` video with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    dims: VideoDims,
    pixels: Vec<f64>,
}

impl VideoTensor {
    pub fn new(dims: VideoDims, pixels: Vec<f64>) -> Result<Self, FieldError> {
        let expected = dims.num_pixels() * 3;
        if pixels.len() != expected {
            return Err(FieldError::PixelCount {
                expected,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(FieldError::PixelRange { index, value });
        }
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: VideoDims, rgb: [f64; 3]) -> Self {
        let pixels = (0..dims.num_pixels()).flat_map(|_| rgb).collect();
        Self::new(dims, pixels).expect("constant colour in range")
    }

    pub fn dims(&self) -> VideoDims {
        self.dims
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn rgb(&self, t: usize, h: usize, w: usize) -> [f64; 3] {
        let i = 3 * self.dims.pixel_index(t, h, w);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `[n, 3]` matrix of the pixels at the given flat indices.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            data.extend_from_slice(&self.pixels[3 * i..3 * i + 3]);
        }
        Tensor::new(&[indices.len(), 3], data).expect("three channels per index")
    }

    /// Whole video as an `[N, 3]` matrix in grid order.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::new(&[self.dims.num_pixels(), 3], self.pixels.clone()).expect("valid video")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOptions {
    /// Grid points evaluated per forward pass.
    pub chunk_size: usize,
    pub threads: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            chunk_size: 8192,
            threads: 1,
        }
    }
}

/// Evaluates the field on the `T×H×W` grid and clamps into `[0, 1]`.
pub fn render_video(
    arch: &FieldArch,
    theta: &Tensor,
    dims: VideoDims,
    opts: RenderOptions,
) -> Result<VideoTensor, FieldError> {
    let layout = layout_theta(arch);
    check_theta(&layout, theta)?;
    let n = dims.num_pixels();
    let chunk = opts.chunk_size.max(1);
    let chunks: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|s| (s, (s + chunk).min(n))).collect();

    let render_chunk = |&(start, end): &(usize, usize)| -> Result<Vec<f64>, FieldError> {
        let coords: Vec<[f64; 3]> = (start..end).map(|i| dims.coord_of(i)).collect();
        let features = positional_encode(&coords, arch.num_bands)?;
        let raw = forward_features(&layout, theta, features)?;
        Ok(raw.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    };

    let threads = opts.threads.clamp(1, chunks.len().max(1));
    let mut parts: Vec<Option<Vec<f64>>> = vec![None; chunks.len()];
    if threads == 1 {
        for (slot, c) in parts.iter_mut().zip(&chunks) {
            *slot = Some(render_chunk(c)?);
        }
    } else {
        let results: Vec<Vec<(usize, Result<Vec<f64>, FieldError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|worker| {
                    let chunks = &chunks;
                    let render_chunk = &render_chunk;
                    s.spawn(move || {
                        (worker..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, render_chunk(&chunks[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
        });
        for (i, r) in results.into_iter().flatten() {
            parts[i] = Some(r?);
        }
    }
    let pixels: Vec<f64> = parts.into_iter().flat_map(|p| p.expect("every chunk rendered")).collect();
    VideoTensor::new(dims, pixels)
}
