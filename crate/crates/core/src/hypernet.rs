//! The hypernetwork that emits field weights from an instance code, the
//! fusion network that builds instance codes, the per-video codebook, and the
//! frozen semantic encoder.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::diffcore::{
    gemm, init_from, stream_id, stream_rng, DiffError, Graph, InitScheme, NodeId, Prng, Tensor,
};
use crate::field::{
    layout_theta, mlp_graph, render_video, FieldArch, FieldError, LayerNodes, RenderOptions, ThetaLayout,
    VideoDims, VideoTensor, FIELD_LAYERS,
};

pub const CONTEXT_DIM: usize = 512;
pub const SEMANTIC_DIM: usize = 512;
pub const INSTANCE_DIM: usize = 128;
pub const FRAME_EMBED_DIM: usize = 512;
pub const GRU_HIDDEN: usize = 512;
pub const GRU_LAYERS: usize = 3;
/// Side of the grayscale thumbnail the builtin frame embedder projects.
pub const THUMBNAIL_SIDE: usize = 16;
pub const DEFAULT_CODE_SIGMA: f64 = 0.01;

/// Scale applied to the He-uniform init of each head's output layer, so
/// that early thetas stay close to the head output biases.
const HEAD_OUTPUT_SCALE: f64 = 0.05;
const MLP_HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypernetError {
    #[error("expected a vector of length {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("embedding rows: expected {expected} frames, got {got}")]
    EmbeddingRows { expected: usize, got: usize },
    #[error("embedding width must be {FRAME_EMBED_DIM}, got {0}")]
    EmbeddingWidth(usize),
    #[error("hypernetwork heads emit {heads} values but the field layout needs {layout}")]
    LayoutMismatch { heads: usize, layout: usize },
    #[error("codebook cannot shrink from {from} to {to} codes")]
    Shrink { from: usize, to: usize },
    #[error("code index {index} out of range for {count} codes")]
    Index { index: usize, count: usize },
    #[error("unknown regularization mode '{0}'")]
    UnknownRegularization(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which regularizers shape the instance-code space during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regularization {
    None,
    Gaussian,
    Semantic,
    GaussianSemantic,
}

impl Regularization {
    /// Whether the semantic code feeds the fusion network; otherwise zeros do.
    pub fn uses_semantic(self) -> bool {
        matches!(self, Regularization::Semantic | Regularization::GaussianSemantic)
    }

    pub fn uses_gaussian(self) -> bool {
        matches!(self, Regularization::Gaussian | Regularization::GaussianSemantic)
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularization::None => "none",
            Regularization::Gaussian => "gaussian",
            Regularization::Semantic => "semantic",
            Regularization::GaussianSemantic => "gaussian+semantic",
        })
    }
}

impl FromStr for Regularization {
    type Err = HypernetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(Regularization::None),
            "gaussian" => Ok(Regularization::Gaussian),
            "semantic" => Ok(Regularization::Semantic),
            "gaussian+semantic" | "semantic+gaussian" => Ok(Regularization::GaussianSemantic),
            other => Err(HypernetError::UnknownRegularization(other.to_string())),
        }
    }
}

/// Network sizes shared by every component of a model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchProfile {
    pub name: String,
    pub field: FieldArch,
    pub head_hidden: usize,
    pub fusion_hidden: usize,
}

impl ArchProfile {
    /// Full-size networks: 8 bands, 256-wide field and hypernetwork MLPs.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            field: FieldArch::new(8, 256),
            head_hidden: 256,
            fusion_hidden: 256,
        }
    }

    /// Reduced widths for desk-scale runs; same code paths.
    pub fn test() -> Self {
        Self {
            name: "test".into(),
            field: FieldArch::new(4, 64),
            head_hidden: 128,
            fusion_hidden: 128,
        }
    }

    pub fn custom(num_bands: usize, field_hidden: usize, head_hidden: usize, fusion_hidden: usize) -> Self {
        Self {
            name: "custom".into(),
            field: FieldArch::new(num_bands, field_hidden),
            head_hidden,
            fusion_hidden,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "test" => Some(Self::test()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Stack of affine layers with ReLU between them and a linear last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// He-uniform weights and zero biases for the widths in `dims`.
    pub fn init(dims: &[usize], rng: &mut Prng) -> Result<Self, DiffError> {
        let layers = dims
            .windows(2)
            .map(|w| {
                Ok(Linear {
                    weight: init_from(&[w[0], w[1]], InitScheme::UniformFanIn, rng)?,
                    bias: Tensor::zeros(&[w[1]]),
                })
            })
            .collect::<Result<_, DiffError>>()?;
        Ok(Self { layers })
    }

    pub fn zeroed(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").bias.numel()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Adds every weight and bias to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<LayerNodes> {
        self.layers
            .iter()
            .map(|l| LayerNodes {
                weight: g.param(l.weight.clone()),
                bias: g.param(l.bias.clone()),
            })
            .collect()
    }

    /// Adds the layers as constants (no gradient).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<LayerNodes> {
        self.layers
            .iter()
            .map(|l| LayerNodes {
                weight: g.constant(l.weight.clone()),
                bias: g.constant(l.bias.clone()),
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, HypernetError> {
        if input.len() != self.input_dim() {
            return Err(HypernetError::Length {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut g = Graph::new();
        let layers = self.bind_frozen(&mut g);
        let x = g.constant(Tensor::matrix(1, input.len(), input.to_vec())?);
        let out = mlp_graph(&mut g, x, &layers);
        Ok(g.evaluate(out)?.data().to_vec())
    }
}

fn mlp_dims(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, MLP_HIDDEN_LAYERS));
    dims.push(output);
    dims
}

fn mlp_names(prefix: &str, mlp: &Mlp) -> Vec<String> {
    (0..mlp.layers.len())
        .flat_map(|k| [format!("{prefix}.layer{k}.weight"), format!("{prefix}.layer{k}.bias")])
        .collect()
}

/// One head per field layer; head `j` emits layer `j`'s weights then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct HypernetWeights {
    pub heads: Vec<Mlp>,
}

impl HypernetWeights {
    pub fn init(profile: &ArchProfile, rng: &mut Prng) -> Result<Self, HypernetError> {
        let layout = layout_theta(&profile.field);
        let mut heads = Vec::with_capacity(FIELD_LAYERS);
        for (layer, &(fan_in, fan_out)) in layout.layer_dims().iter().enumerate() {
            let (_, len) = layout.layer_span(layer);
            let mut head = Mlp::init(&mlp_dims(INSTANCE_DIM, profile.head_hidden, len), rng)?;
            let out = head.layers.last_mut().expect("head has layers");
            out.weight.data_mut().iter_mut().for_each(|w| *w *= HEAD_OUTPUT_SCALE);
            // The output bias is a freshly initialized field layer, so theta
            // starts as a sensible network for every code.
            let base = init_from(&[fan_in, fan_out], InitScheme::UniformFanIn, rng)?;
            let bias = out.bias.data_mut();
            bias[..fan_in * fan_out].copy_from_slice(base.data());
            heads.push(head);
        }
        Ok(Self { heads })
    }

    pub fn zeroed(profile: &ArchProfile) -> Self {
        let layout = layout_theta(&profile.field);
        let heads = (0..FIELD_LAYERS)
            .map(|layer| Mlp::zeroed(&mlp_dims(INSTANCE_DIM, profile.head_hidden, layout.layer_span(layer).1)))
            .collect();
        Self { heads }
    }

    pub fn output_len(&self) -> usize {
        self.heads.iter().map(Mlp::output_dim).sum()
    }

    pub fn check_layout(&self, layout: &ThetaLayout) -> Result<(), HypernetError> {
        let matches = self.heads.len() == FIELD_LAYERS
            && self
                .heads
                .iter()
                .enumerate()
                .all(|(j, h)| h.output_dim() == layout.layer_span(j).1);
        if matches {
            Ok(())
        } else {
            Err(HypernetError::LayoutMismatch {
                heads: self.output_len(),
                layout: layout.total_len,
            })
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.heads.iter().flat_map(Mlp::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.heads.iter_mut().flat_map(Mlp::tensors_mut).collect()
    }
}

/// Graph nodes for the head outputs of a batch of instance codes.
pub struct ThetaBatch {
    /// Head `j` output, `[batch, span_j]`.
    heads: Vec<NodeId>,
    spans: Vec<usize>,
    dims: [(usize, usize); FIELD_LAYERS],
}

impl ThetaBatch {
    /// Field layers for row `row` of the batch.
    pub fn layers(&self, g: &mut Graph, row: usize) -> Vec<LayerNodes> {
        self.heads
            .iter()
            .zip(&self.spans)
            .zip(&self.dims)
            .map(|((&head, &span), &(i, o))| LayerNodes {
                weight: g.slice(head, row * span, &[i, o]),
                bias: g.slice(head, row * span + i * o, &[o]),
            })
            .collect()
    }

    pub fn head_outputs(&self) -> &[NodeId] {
        &self.heads
    }
}

/// Runs every head on `codes` (`[batch, 128]`).
pub fn heads_graph(g: &mut Graph, heads: &[Vec<LayerNodes>], layout: &ThetaLayout, codes: NodeId) -> ThetaBatch {
    let outputs = heads.iter().map(|h| mlp_graph(g, codes, h)).collect();
    ThetaBatch {
        heads: outputs,
        spans: (0..FIELD_LAYERS).map(|j| layout.layer_span(j).1).collect(),
        dims: *layout.layer_dims(),
    }
}

/// Flat theta for one instance code.
pub fn hypernet_forward(weights: &HypernetWeights, layout: &ThetaLayout, code: &[f64]) -> Result<Tensor, HypernetError> {
    weights.check_layout(layout)?;
    if code.len() != INSTANCE_DIM {
        return Err(HypernetError::Length {
            expected: INSTANCE_DIM,
            got: code.len(),
        });
    }
    let mut g = Graph::new();
    let heads: Vec<_> = weights.heads.iter().map(|h| h.bind_frozen(&mut g)).collect();
    let m = g.constant(Tensor::matrix(1, INSTANCE_DIM, code.to_vec())?);
    let batch = heads_graph(&mut g, &heads, layout, m);
    let theta = g.concat(batch.head_outputs(), 1);
    let value = g.evaluate(theta)?;
    Ok(value.reshaped(&[layout.total_len])?)
}

/// `m = φ([c, g])`.
pub fn fuse_latent(context: &[f64], semantic: &[f64], fusion: &Mlp) -> Result<Vec<f64>, HypernetError> {
    for (v, dim) in [(context, CONTEXT_DIM), (semantic, SEMANTIC_DIM)] {
        if v.len() != dim {
            return Err(HypernetError::Length {
                expected: dim,
                got: v.len(),
            });
        }
    }
    let input: Vec<f64> = context.iter().chain(semantic).copied().collect();
    fusion.forward(&input)
}

/// Per-video learnable context codes and frozen semantic codes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentCodebook {
    context: Vec<Vec<f64>>,
    semantic: Vec<Vec<f64>>,
}

impl LatentCodebook {
    pub fn from_parts(context: Vec<Vec<f64>>, semantic: Vec<Vec<f64>>) -> Result<Self, HypernetError> {
        if context.len() != semantic.len() {
            return Err(HypernetError::Length {
                expected: context.len(),
                got: semantic.len(),
            });
        }
        for (rows, dim) in [(&context, CONTEXT_DIM), (&semantic, SEMANTIC_DIM)] {
            if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                return Err(HypernetError::Length {
                    expected: dim,
                    got: bad.len(),
                });
            }
        }
        Ok(Self { context, semantic })
    }

    pub fn len(&self) -> usize {
        self.context.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context.is_empty()
    }

    pub fn context(&self, n: usize) -> &[f64] {
        &self.context[n]
    }

    pub fn semantic(&self, n: usize) -> &[f64] {
        &self.semantic[n]
    }

    pub fn context_rows(&self) -> &[Vec<f64>] {
        &self.context
    }

    pub fn semantic_rows(&self) -> &[Vec<f64>] {
        &self.semantic
    }

    /// Only context codes are trainable; semantic codes stay as registered.
    pub fn context_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.context[n]
    }
}

/// Context code for row `n`; each row has its own stream, so a codebook of
/// N rows is a prefix of any larger one built from the same seed.
fn context_code(n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>, DiffError> {
    let mut rng = stream_rng(seed, stream_id("codebook").wrapping_add(n as u64));
    Ok(init_from(&[CONTEXT_DIM], InitScheme::Gaussian(sigma), &mut rng)?.into_vec())
}

pub fn codebook_init(semantic: Vec<Vec<f64>>, sigma: f64, seed: u64) -> Result<LatentCodebook, HypernetError> {
    codebook_extend(&LatentCodebook::default(), semantic, sigma, seed)
}

/// Appends one code per new semantic row; existing rows are copied unchanged.
pub fn codebook_extend(
    old: &LatentCodebook,
    added_semantic: Vec<Vec<f64>>,
    sigma: f64,
    seed: u64,
) -> Result<LatentCodebook, HypernetError> {
    let mut context = old.context.clone();
    let mut semantic = old.semantic.clone();
    for row in added_semantic {
        context.push(context_code(context.len(), sigma, seed)?);
        semantic.push(row);
    }
    LatentCodebook::from_parts(context, semantic)
}

/// Grows `old` to `new_len` codes, as used by progressive training.
pub fn codebook_resize(
    old: &LatentCodebook,
    all_semantic: &[Vec<f64>],
    new_len: usize,
    sigma: f64,
    seed: u64,
) -> Result<LatentCodebook, HypernetError> {
    if new_len < old.len() {
        return Err(HypernetError::Shrink {
            from: old.len(),
            to: new_len,
        });
    }
    codebook_extend(old, all_semantic[old.len()..new_len].to_vec(), sigma, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    /// `[3·hidden, input]`, gate order reset, update, candidate.
    pub w_ih: Tensor,
    /// `[3·hidden, hidden]`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruCell {
    fn init(input: usize, rng: &mut Prng) -> Result<Self, DiffError> {
        let bound = InitScheme::Uniform(1.0 / (GRU_HIDDEN as f64).sqrt());
        let h3 = 3 * GRU_HIDDEN;
        Ok(Self {
            w_ih: init_from(&[h3, input], bound, rng)?,
            w_hh: init_from(&[h3, GRU_HIDDEN], bound, rng)?,
            b_ih: init_from(&[h3], bound, rng)?,
            b_hh: init_from(&[h3], bound, rng)?,
        })
    }

    /// Hidden states for every step of `inputs` (`[steps, input]`), walking
    /// forward or backward in time. Output row `t` is the state after
    /// consuming input `t`.
    fn run(&self, inputs: &[f64], steps: usize, reverse: bool) -> Vec<f64> {
        let hid = GRU_HIDDEN;
        let input_dim = self.w_ih.shape()[1];
        let mut gates_x = vec![0.0; steps * 3 * hid];
        gemm(steps, input_dim, 3 * hid, inputs, false, self.w_ih.data(), true, &mut gates_x);
        let mut out = vec![0.0; steps * hid];
        let mut h = vec![0.0; hid];
        let mut gates_h = vec![0.0; 3 * hid];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        for t in order {
            gates_h.iter_mut().for_each(|v| *v = 0.0);
            gemm(1, hid, 3 * hid, &h, false, self.w_hh.data(), true, &mut gates_h);
            let gx = &gates_x[t * 3 * hid..(t + 1) * 3 * hid];
            let (bi, bh) = (self.b_ih.data(), self.b_hh.data());
            let mut next = vec![0.0; hid];
            for k in 0..hid {
                let r = sigmoid(gx[k] + bi[k] + gates_h[k] + bh[k]);
                let z = sigmoid(gx[hid + k] + bi[hid + k] + gates_h[hid + k] + bh[hid + k]);
                let n = (gx[2 * hid + k] + bi[2 * hid + k] + r * (gates_h[2 * hid + k] + bh[2 * hid + k])).tanh();
                next[k] = (1.0 - z) * n + z * h[k];
            }
            h = next;
            out[t * hid..(t + 1) * hid].copy_from_slice(&h);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub forward: GruCell,
    pub backward: GruCell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticMode {
    /// Frozen random projection of grayscale thumbnails.
    Builtin,
    /// Per-frame embeddings supplied by the caller.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SemanticEncoderConfig {
    pub mode: SemanticMode,
    pub seed: u64,
}

/// Frozen video encoder: per-frame embeddings aggregated by a 3-layer
/// bidirectional GRU, averaged over time.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEncoder {
    /// `[256, 512]` thumbnail projection for builtin embeddings.
    pub projection: Tensor,
    pub layers: Vec<GruLayer>,
}

impl SemanticEncoder {
    pub fn new(seed: u64) -> Result<Self, HypernetError> {
        let mut rng = stream_rng(seed, stream_id("semantic-encoder"));
        let thumb = THUMBNAIL_SIDE * THUMBNAIL_SIDE;
        let projection = init_from(
            &[thumb, FRAME_EMBED_DIM],
            InitScheme::Gaussian(1.0 / (thumb as f64).sqrt()),
            &mut rng,
        )?;
        let mut layers = Vec::with_capacity(GRU_LAYERS);
        for l in 0..GRU_LAYERS {
            let input = if l == 0 { FRAME_EMBED_DIM } else { 2 * GRU_HIDDEN };
            layers.push(GruLayer {
                forward: GruCell::init(input, &mut rng)?,
                backward: GruCell::init(input, &mut rng)?,
            });
        }
        Ok(Self { projection, layers })
    }

    /// Same shapes as [`SemanticEncoder::new`], all zeros; a target for
    /// loading stored weights.
    pub fn zeroed() -> Self {
        let h3 = 3 * GRU_HIDDEN;
        let cell = |input: usize| GruCell {
            w_ih: Tensor::zeros(&[h3, input]),
            w_hh: Tensor::zeros(&[h3, GRU_HIDDEN]),
            b_ih: Tensor::zeros(&[h3]),
            b_hh: Tensor::zeros(&[h3]),
        };
        let layers = (0..GRU_LAYERS)
            .map(|l| {
                let input = if l == 0 { FRAME_EMBED_DIM } else { 2 * GRU_HIDDEN };
                GruLayer {
                    forward: cell(input),
                    backward: cell(input),
                }
            })
            .collect();
        Self {
            projection: Tensor::zeros(&[THUMBNAIL_SIDE * THUMBNAIL_SIDE, FRAME_EMBED_DIM]),
            layers,
        }
    }

    /// Named frozen tensors, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("semantic.projection".to_string(), &self.projection)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                for (name, t) in [
                    ("w_ih", &cell.w_ih),
                    ("w_hh", &cell.w_hh),
                    ("b_ih", &cell.b_ih),
                    ("b_hh", &cell.b_hh),
                ] {
                    out.push((format!("semantic.gru.l{l}.{dir}.{name}"), t));
                }
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("semantic.projection".to_string(), &mut self.projection)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (dir, cell) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                let GruCell { w_ih, w_hh, b_ih, b_hh } = cell;
                for (name, t) in [("w_ih", w_ih), ("w_hh", w_hh), ("b_ih", b_ih), ("b_hh", b_hh)] {
                    out.push((format!("semantic.gru.l{l}.{dir}.{name}"), t));
                }
            }
        }
        out
    }

    /// Unit-norm embedding of each frame's grayscale thumbnail.
    pub fn frame_embeddings(&self, video: &VideoTensor) -> Vec<Vec<f64>> {
        let dims = video.dims();
        (0..dims.frames)
            .map(|t| {
                let thumb = thumbnail(video, t);
                let mut e = vec![0.0; FRAME_EMBED_DIM];
                gemm(1, thumb.len(), FRAME_EMBED_DIM, &thumb, false, self.projection.data(), false, &mut e);
                let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    e.iter_mut().for_each(|v| *v /= norm);
                }
                e
            })
            .collect()
    }

    /// Aggregates `[T, 512]` frame embeddings into the 512-dim semantic code.
    ///
    /// The last layer's forward and backward states are averaged per step,
    /// then averaged over time.
    pub fn aggregate(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>, HypernetError> {
        if let Some(bad) = frames.iter().find(|r| r.len() != FRAME_EMBED_DIM) {
            return Err(HypernetError::EmbeddingWidth(bad.len()));
        }
        let steps = frames.len();
        let mut x: Vec<f64> = frames.iter().flatten().copied().collect();
        let mut last = (Vec::new(), Vec::new());
        for layer in &self.layers {
            let fwd = layer.forward.run(&x, steps, false);
            let bwd = layer.backward.run(&x, steps, true);
            x = (0..steps)
                .flat_map(|t| {
                    fwd[t * GRU_HIDDEN..(t + 1) * GRU_HIDDEN]
                        .iter()
                        .chain(&bwd[t * GRU_HIDDEN..(t + 1) * GRU_HIDDEN])
                        .copied()
                        .collect::<Vec<_>>()
                })
                .collect();
            last = (fwd, bwd);
        }
        let (fwd, bwd) = last;
        let mut g = vec![0.0; SEMANTIC_DIM];
        for t in 0..steps {
            for k in 0..GRU_HIDDEN {
                g[k] += 0.5 * (fwd[t * GRU_HIDDEN + k] + bwd[t * GRU_HIDDEN + k]);
            }
        }
        g.iter_mut().for_each(|v| *v /= steps as f64);
        Ok(g)
    }

    pub fn encode_video(&self, video: &VideoTensor) -> Result<Vec<f64>, HypernetError> {
        self.aggregate(&self.frame_embeddings(video))
    }

    /// Semantic code from externally computed per-frame embeddings.
    pub fn encode_embeddings(&self, frames: &[Vec<f64>], expected_frames: usize) -> Result<Vec<f64>, HypernetError> {
        if frames.len() != expected_frames {
            return Err(HypernetError::EmbeddingRows {
                expected: expected_frames,
                got: frames.len(),
            });
        }
        self.aggregate(frames)
    }
}

/// Source of a video's per-frame embeddings.
pub enum SemanticInput<'a> {
    Video(&'a VideoTensor),
    Embeddings { rows: &'a [Vec<f64>], frames: usize },
}

pub fn semantic_encode(encoder: &SemanticEncoder, input: SemanticInput<'_>) -> Result<Vec<f64>, HypernetError> {
    match input {
        SemanticInput::Video(v) => encoder.encode_video(v),
        SemanticInput::Embeddings { rows, frames } => encoder.encode_embeddings(rows, frames),
    }
}

/// Luma thumbnail of frame `t`, box-averaged onto a 16×16 grid.
fn thumbnail(video: &VideoTensor, t: usize) -> Vec<f64> {
    let dims = video.dims();
    let span = |i: usize, n: usize| {
        let lo = i * n / THUMBNAIL_SIDE;
        let hi = ((i + 1) * n).div_ceil(THUMBNAIL_SIDE).max(lo + 1);
        lo..hi.min(n)
    };
    let mut out = Vec::with_capacity(THUMBNAIL_SIDE * THUMBNAIL_SIDE);
    for i in 0..THUMBNAIL_SIDE {
        for j in 0..THUMBNAIL_SIDE {
            let (rows, cols) = (span(i, dims.height), span(j, dims.width));
            let mut sum = 0.0;
            let mut count = 0usize;
            for h in rows {
                for w in cols.clone() {
                    let [r, g, b] = video.rgb(t, h, w);
                    sum += 0.299 * r + 0.587 * g + 0.114 * b;
                    count += 1;
                }
            }
            out.push(sum / count as f64);
        }
    }
    out
}

/// Every learned and frozen component of a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct InrvModel {
    pub profile: ArchProfile,
    pub regularization: Regularization,
    pub hyper: HypernetWeights,
    pub fusion: Mlp,
    pub codebook: LatentCodebook,
    pub encoder: SemanticEncoder,
    pub seed: u64,
}

impl InrvModel {
    /// Fresh weights and an empty codebook.
    pub fn new(profile: ArchProfile, regularization: Regularization, seed: u64) -> Result<Self, HypernetError> {
        let mut rng = stream_rng(seed, stream_id("hypernet"));
        let hyper = HypernetWeights::init(&profile, &mut rng)?;
        let mut rng = stream_rng(seed, stream_id("fusion"));
        let fusion = Mlp::init(
            &mlp_dims(CONTEXT_DIM + SEMANTIC_DIM, profile.fusion_hidden, INSTANCE_DIM),
            &mut rng,
        )?;
        let encoder = SemanticEncoder::new(seed)?;
        Ok(Self {
            profile,
            regularization,
            hyper,
            fusion,
            codebook: LatentCodebook::default(),
            encoder,
            seed,
        })
    }

    /// Zero weights of the right shapes and an empty codebook.
    pub fn skeleton(profile: ArchProfile, regularization: Regularization, seed: u64) -> Self {
        let fusion = Mlp::zeroed(&mlp_dims(CONTEXT_DIM + SEMANTIC_DIM, profile.fusion_hidden, INSTANCE_DIM));
        Self {
            hyper: HypernetWeights::zeroed(&profile),
            profile,
            regularization,
            fusion,
            codebook: LatentCodebook::default(),
            encoder: SemanticEncoder::zeroed(),
            seed,
        }
    }

    /// Every network tensor (heads, fusion, semantic encoder) with a stable
    /// name, in a fixed order.
    pub fn named_weights(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, head) in self.hyper.heads.iter().enumerate() {
            out.extend(mlp_names(&format!("hyper.head{j}"), head).into_iter().zip(head.tensors()));
        }
        out.extend(mlp_names("fusion", &self.fusion).into_iter().zip(self.fusion.tensors()));
        out.extend(self.encoder.named_tensors());
        out
    }

    pub fn named_weights_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (j, head) in self.hyper.heads.iter_mut().enumerate() {
            let names = mlp_names(&format!("hyper.head{j}"), head);
            out.extend(names.into_iter().zip(head.tensors_mut()));
        }
        let names = mlp_names("fusion", &self.fusion);
        out.extend(names.into_iter().zip(self.fusion.tensors_mut()));
        out.extend(self.encoder.named_tensors_mut());
        out
    }

    pub fn layout(&self) -> ThetaLayout {
        layout_theta(&self.profile.field)
    }

    pub fn num_codes(&self) -> usize {
        self.codebook.len()
    }

    fn check_index(&self, n: usize) -> Result<(), HypernetError> {
        if n >= self.codebook.len() {
            return Err(HypernetError::Index {
                index: n,
                count: self.codebook.len(),
            });
        }
        Ok(())
    }

    /// The semantic input actually fed to the fusion network for code `n`.
    pub fn fusion_semantic(&self, n: usize) -> Vec<f64> {
        if self.regularization.uses_semantic() {
            self.codebook.semantic(n).to_vec()
        } else {
            vec![0.0; SEMANTIC_DIM]
        }
    }

    pub fn instance_code(&self, n: usize) -> Result<Vec<f64>, HypernetError> {
        self.check_index(n)?;
        fuse_latent(self.codebook.context(n), &self.fusion_semantic(n), &self.fusion)
    }

    pub fn instance_codes(&self) -> Result<Vec<Vec<f64>>, HypernetError> {
        (0..self.num_codes()).map(|n| self.instance_code(n)).collect()
    }

    pub fn theta_for_latent(&self, code: &[f64]) -> Result<Tensor, HypernetError> {
        hypernet_forward(&self.hyper, &self.layout(), code)
    }

    pub fn theta_for(&self, n: usize) -> Result<Tensor, HypernetError> {
        self.theta_for_latent(&self.instance_code(n)?)
    }

    pub fn render_latent(&self, code: &[f64], dims: VideoDims, opts: RenderOptions) -> Result<VideoTensor, HypernetError> {
        let theta = self.theta_for_latent(code)?;
        Ok(render_video(&self.profile.field, &theta, dims, opts)?)
    }

    pub fn render(&self, n: usize, dims: VideoDims, opts: RenderOptions) -> Result<VideoTensor, HypernetError> {
        self.render_latent(&self.instance_code(n)?, dims, opts)
    }

    /// Adds videos to the codebook, computing their semantic codes.
    pub fn register_semantic(&mut self, semantic: Vec<Vec<f64>>, sigma: f64) -> Result<(), HypernetError> {
        self.codebook = codebook_extend(&self.codebook, semantic, sigma, self.seed)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_difference, relative_error, seeded_init};

    fn tiny_profile() -> ArchProfile {
        ArchProfile::custom(1, 3, 4, 4)
    }

    #[test]
    fn head_lengths_sum_to_layout() {
        for profile in [ArchProfile::test(), tiny_profile()] {
            let mut rng = stream_rng(1, 0);
            let w = HypernetWeights::init(&profile, &mut rng).unwrap();
            assert_eq!(w.output_len(), layout_theta(&profile.field).total_len);
            w.check_layout(&layout_theta(&profile.field)).unwrap();
        }
        let paper = HypernetWeights::zeroed(&ArchProfile::paper());
        assert_eq!(paper.output_len(), 144_899);
    }

    #[test]
    fn zero_weights_emit_head_biases() {
        let profile = tiny_profile();
        let layout = layout_theta(&profile.field);
        let mut w = HypernetWeights::zeroed(&profile);
        let mut expected = Vec::new();
        for (j, head) in w.heads.iter_mut().enumerate() {
            let out = head.layers.last_mut().unwrap();
            let bias: Vec<f64> = (0..out.bias.numel()).map(|i| (j * 100 + i) as f64 * 0.01).collect();
            out.bias = Tensor::vector(bias.clone());
            expected.extend(bias);
        }
        let code = vec![0.7; INSTANCE_DIM];
        let theta = hypernet_forward(&w, &layout, &code).unwrap();
        assert_eq!(theta.data(), expected.as_slice());
    }

    #[test]
    fn hypernet_is_deterministic() {
        let profile = ArchProfile::test();
        let mut rng = stream_rng(2, 0);
        let w = HypernetWeights::init(&profile, &mut rng).unwrap();
        let layout = layout_theta(&profile.field);
        let code = seeded_init(&[INSTANCE_DIM], InitScheme::Gaussian(1.0), 4).unwrap();
        let a = hypernet_forward(&w, &layout, code.data()).unwrap();
        let b = hypernet_forward(&w, &layout, code.data()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.numel(), 10_115);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let w = HypernetWeights::zeroed(&tiny_profile());
        let other = layout_theta(&FieldArch::new(2, 3));
        assert!(matches!(
            hypernet_forward(&w, &other, &[0.0; INSTANCE_DIM]),
            Err(HypernetError::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn zero_fusion_returns_output_bias() {
        let mut fusion = Mlp::zeroed(&mlp_dims(1024, 8, INSTANCE_DIM));
        let bias: Vec<f64> = (0..INSTANCE_DIM).map(|i| i as f64).collect();
        fusion.layers.last_mut().unwrap().bias = Tensor::vector(bias.clone());
        let m = fuse_latent(&[0.3; CONTEXT_DIM], &[0.1; SEMANTIC_DIM], &fusion).unwrap();
        assert_eq!(m.len(), 128);
        assert_eq!(m, bias);
        assert!(fuse_latent(&[0.0; 3], &[0.0; SEMANTIC_DIM], &fusion).is_err());
    }

    #[test]
    fn fusion_gradient_wrt_context_matches_finite_differences() {
        let mut rng = stream_rng(3, 0);
        let fusion = Mlp::init(&mlp_dims(1024, 6, INSTANCE_DIM), &mut rng).unwrap();
        let c0 = seeded_init(&[CONTEXT_DIM], InitScheme::Gaussian(0.5), 5).unwrap();
        let sem = seeded_init(&[SEMANTIC_DIM], InitScheme::Gaussian(0.5), 6).unwrap();
        let weights = seeded_init(&[INSTANCE_DIM], InitScheme::Uniform(1.0), 7).unwrap();
        let objective = |c: &[f64], grad: bool| {
            let mut g = Graph::new();
            let layers = fusion.bind_frozen(&mut g);
            let cn = g.param(Tensor::matrix(1, CONTEXT_DIM, c.to_vec()).unwrap());
            let sn = g.constant(Tensor::matrix(1, SEMANTIC_DIM, sem.data().to_vec()).unwrap());
            let x = g.concat(&[cn, sn], 1);
            let m = mlp_graph(&mut g, x, &layers);
            let w = g.constant(weights.reshaped(&[1, INSTANCE_DIM]).unwrap());
            let p = g.mul(m, w);
            let s = g.sin(p);
            let l = g.reduce_sum(s, None);
            let v = g.evaluate(l).unwrap().item();
            let grads = grad.then(|| {
                let gr = g.backward(l).unwrap();
                assert!(!gr.contains(sn));
                gr.get(cn).unwrap().data().to_vec()
            });
            (v, grads)
        };
        let analytic = objective(c0.data(), true).1.unwrap();
        let numeric = finite_difference(c0.data(), 1e-5, |c| objective(c, false).0);
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn codebook_prefix_preserved() {
        let sem = |n: usize| vec![vec![0.5; SEMANTIC_DIM]; n];
        let small = codebook_init(sem(10), DEFAULT_CODE_SIGMA, 11).unwrap();
        let grown = codebook_extend(&small, sem(40), DEFAULT_CODE_SIGMA, 11).unwrap();
        assert_eq!(grown.len(), 50);
        for n in 0..10 {
            let a: Vec<u64> = small.context(n).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = grown.context(n).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        let direct = codebook_init(sem(50), DEFAULT_CODE_SIGMA, 11).unwrap();
        assert_eq!(direct, grown);
        assert!(codebook_resize(&grown, &sem(50), 20, DEFAULT_CODE_SIGMA, 11).is_err());
    }

    #[test]
    fn codebook_init_deterministic_and_degenerate() {
        let sem = vec![vec![0.0; SEMANTIC_DIM]; 3];
        let a = codebook_init(sem.clone(), DEFAULT_CODE_SIGMA, 1).unwrap();
        let b = codebook_init(sem.clone(), DEFAULT_CODE_SIGMA, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.context(0).iter().any(|&v| v != 0.0));
        let z = codebook_init(sem, 0.0, 1).unwrap();
        assert!(z.context_rows().iter().flatten().all(|&v| v == 0.0));
    }

    fn constant_video(value: f64) -> VideoTensor {
        VideoTensor::filled(VideoDims::new(3, 8, 8).unwrap(), [value; 3])
    }

    #[test]
    fn semantic_code_is_deterministic_and_distinguishes_constants() {
        let enc = SemanticEncoder::new(5).unwrap();
        let black = constant_video(0.0);
        let white = constant_video(1.0);
        let g1 = semantic_encode(&enc, SemanticInput::Video(&black)).unwrap();
        let g2 = semantic_encode(&enc, SemanticInput::Video(&black)).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.len(), SEMANTIC_DIM);
        let gw = semantic_encode(&enc, SemanticInput::Video(&white)).unwrap();
        let dist: f64 = g1.iter().zip(&gw).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn external_embeddings_checked() {
        let enc = SemanticEncoder::new(5).unwrap();
        let rows = vec![vec![0.1; FRAME_EMBED_DIM]; 4];
        let g = semantic_encode(&enc, SemanticInput::Embeddings { rows: &rows, frames: 4 }).unwrap();
        assert_eq!(g.len(), 512);
        assert!(matches!(
            semantic_encode(&enc, SemanticInput::Embeddings { rows: &rows, frames: 5 }),
            Err(HypernetError::EmbeddingRows { expected: 5, got: 4 })
        ));
        let narrow = vec![vec![0.1; 10]; 4];
        assert!(matches!(
            semantic_encode(&enc, SemanticInput::Embeddings { rows: &narrow, frames: 4 }),
            Err(HypernetError::EmbeddingWidth(10))
        ));
    }

    #[test]
    fn thumbnail_handles_small_frames() {
        let v = VideoTensor::filled(VideoDims::new(1, 5, 3).unwrap(), [0.5; 3]);
        let t = thumbnail(&v, 0);
        assert_eq!(t.len(), 256);
        assert!(t.iter().all(|&x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn regularization_parsing() {
        for mode in [
            Regularization::None,
            Regularization::Gaussian,
            Regularization::Semantic,
            Regularization::GaussianSemantic,
        ] {
            assert_eq!(mode.to_string().parse::<Regularization>().unwrap(), mode);
        }
        assert!("clip".parse::<Regularization>().is_err());
    }
}
