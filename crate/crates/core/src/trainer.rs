//! Losses, the single-video fitter, per-stage optimization, and the
//! progressive training driver.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::diffcore::{
    adam_step, init_from, relative_error, stream_id, stream_rng, AdamState, DiffError, Gradients, Graph, InitScheme,
    NodeId, Prng, Tensor,
};
use crate::field::{
    bind_theta, layout_theta, mlp_graph, positional_encode, FieldArch, FieldError, LayerNodes, VideoDims,
    VideoTensor,
};
use crate::hypernet::{
    codebook_resize, heads_graph, ArchProfile, HypernetError, InrvModel, Regularization, CONTEXT_DIM,
    DEFAULT_CODE_SIGMA, SEMANTIC_DIM,
};

/// Lower bound on a per-dimension standard deviation in the KL term.
pub const KL_SIGMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_SINGLE_STEPS: usize = 750;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at stage {stage}, epoch {epoch}: {source}")]
    Divergence {
        stage: usize,
        epoch: usize,
        #[source]
        source: DiffError,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("schedule needs N >= 1")]
    ZeroSchedule,
    #[error("gaussian KL needs at least 2 codes, got {0}")]
    TooFewCodes(usize),
    #[error("stage covers {videos} videos but the codebook has {codes}")]
    CodebookTooSmall { videos: usize, codes: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Hypernet(#[from] HypernetError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub profile: ArchProfile,
    pub regularization: Regularization,
    pub lr: f64,
    /// Per-pixel MSE (`[0, 1]` pixels) that ends every stage but the last.
    pub threshold: f64,
    pub max_epochs: usize,
    /// Epoch budget of the final stage; defaults to `max_epochs`.
    pub final_epochs: Option<usize>,
    /// Pixels sampled per video per step.
    pub pixel_batch: usize,
    /// Videos per step.
    pub video_batch: usize,
    /// Weight of the Gaussian KL term.
    pub delta: f64,
    pub code_sigma: f64,
    /// Size of the first progressive stage.
    pub first_stage: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: ArchProfile::paper(),
            regularization: Regularization::Semantic,
            lr: 1e-4,
            threshold: 1e-3,
            max_epochs: 100,
            final_epochs: None,
            pixel_batch: 4096,
            video_batch: 10,
            delta: 1.0,
            code_sigma: DEFAULT_CODE_SIGMA,
            first_stage: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return fail("lr must be > 0");
        }
        if !(self.threshold > 0.0) {
            return fail("threshold must be > 0");
        }
        if !(self.delta >= 0.0) {
            return fail("delta must be >= 0");
        }
        if !(self.code_sigma >= 0.0) {
            return fail("code sigma must be >= 0");
        }
        if self.pixel_batch == 0 || self.video_batch == 0 || self.first_stage == 0 {
            return fail("batch sizes and first stage must be >= 1");
        }
        Ok(())
    }

    fn epochs_for(&self, last: bool) -> usize {
        if last {
            self.final_epochs.unwrap_or(self.max_epochs)
        } else {
            self.max_epochs
        }
    }
}

/// `mean((pred - target)²)` as a graph node.
pub fn reconstruction_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> NodeId {
    let d = g.sub(pred, target);
    let sq = g.square(d);
    g.reduce_mean(sq, None)
}

pub fn reconstruction_loss_value(pred: &Tensor, target: &Tensor) -> Result<f64, TrainError> {
    if pred.shape() != target.shape() {
        return Err(TrainError::Shape(pred.shape().to_vec(), target.shape().to_vec()));
    }
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let loss = reconstruction_loss(&mut g, p, t);
    Ok(g.evaluate(loss)?.item())
}

/// Mean over dimensions of `KL(N(μ_d, σ_d) ‖ N(0, 1))` with the empirical
/// (population) moments of the rows of `codes` (`[B, D]`, B ≥ 2).
pub fn gaussian_kl_graph(g: &mut Graph, codes: NodeId) -> NodeId {
    let mu = g.reduce_mean(codes, Some(0));
    let neg_mu = g.scale(mu, -1.0);
    let centered = g.broadcast_add(codes, neg_mu);
    let sq = g.square(centered);
    let var = g.reduce_mean(sq, Some(0));
    let var = g.clamp_min(var, KL_SIGMA_FLOOR * KL_SIGMA_FLOOR);
    let log_var = g.log(var);
    let mu_sq = g.square(mu);
    let a = g.scale(log_var, -0.5);
    let b = g.add(var, mu_sq);
    let b = g.scale(b, 0.5);
    let kl = g.add(a, b);
    let kl = g.reduce_mean(kl, None);
    // The constant −1/2 per dimension survives the mean unchanged.
    let half = g.constant(Tensor::scalar(0.5));
    g.sub(kl, half)
}

pub fn gaussian_kl(codes: &[Vec<f64>]) -> Result<f64, TrainError> {
    if codes.len() < 2 {
        return Err(TrainError::TooFewCodes(codes.len()));
    }
    let dim = codes[0].len();
    let data: Vec<f64> = codes.iter().flatten().copied().collect();
    let mut g = Graph::new();
    let m = g.constant(Tensor::new(&[codes.len(), dim], data)?);
    let kl = gaussian_kl_graph(&mut g, m);
    Ok(g.evaluate(kl)?.item())
}

/// Stage sizes `min(10^i, N)` for `i = 0, 1, ...`, ending at `N`.
pub fn progressive_schedule(n: usize) -> Result<Vec<usize>, TrainError> {
    progressive_schedule_from(n, 1)
}

/// Like [`progressive_schedule`] with a first stage of `first` videos,
/// followed by the powers of ten above it.
pub fn progressive_schedule_from(n: usize, first: usize) -> Result<Vec<usize>, TrainError> {
    if n == 0 {
        return Err(TrainError::ZeroSchedule);
    }
    let mut sizes = vec![first.clamp(1, n)];
    let mut p: usize = 1;
    while *sizes.last().expect("non-empty") < n {
        p = p.saturating_mul(10);
        let s = p.min(n);
        if s > *sizes.last().expect("non-empty") {
            sizes.push(s);
        }
    }
    Ok(sizes)
}

/// Positional features of every pixel, cached per video size.
#[derive(Default)]
struct FeatureCache {
    bands: usize,
    by_dims: HashMap<VideoDims, Tensor>,
}

impl FeatureCache {
    fn new(bands: usize) -> Self {
        Self {
            bands,
            by_dims: HashMap::new(),
        }
    }

    fn get(&mut self, dims: VideoDims) -> Result<&Tensor, TrainError> {
        if !self.by_dims.contains_key(&dims) {
            let coords: Vec<[f64; 3]> = (0..dims.num_pixels()).map(|i| dims.coord_of(i)).collect();
            self.by_dims.insert(dims, positional_encode(&coords, self.bands)?);
        }
        Ok(&self.by_dims[&dims])
    }
}

/// One video's contribution to a loss graph.
pub struct BatchItem {
    /// Row of the stage's codebook slice.
    pub code: usize,
    pub features: Tensor,
    pub target: Tensor,
}

/// Graph handles of a built loss.
pub struct LossNodes {
    pub loss: NodeId,
    pub recon: NodeId,
    pub kl: Option<NodeId>,
    pub heads: Vec<Vec<LayerNodes>>,
    pub fusion: Vec<LayerNodes>,
    /// Context-code leaves, one per distinct code in the batch, in first-use
    /// order.
    pub codes: Vec<(usize, NodeId)>,
}

fn layer_ids(layers: &[LayerNodes]) -> impl Iterator<Item = NodeId> + '_ {
    layers.iter().flat_map(|l| [l.weight, l.bias])
}

impl LossNodes {
    /// Parameter leaves of heads then fusion, matching
    /// `hyper.tensors()` followed by `fusion.tensors()`.
    pub fn network_params(&self) -> Vec<NodeId> {
        self.heads
            .iter()
            .flat_map(|h| layer_ids(h))
            .chain(layer_ids(&self.fusion))
            .collect()
    }
}

/// Builds the regularized objective for a batch: the mean over items of
/// each item's pixel MSE, plus `delta · KL` over the batch's instance codes
/// when the Gaussian regularizer is on and the batch has ≥ 2 codes.
pub fn build_loss(
    g: &mut Graph,
    model: &InrvModel,
    contexts: &[Tensor],
    items: &[BatchItem],
    delta: f64,
) -> Result<LossNodes, TrainError> {
    let layout = model.layout();
    let heads: Vec<_> = model.hyper.heads.iter().map(|h| h.bind(g)).collect();
    let fusion = model.fusion.bind(g);

    let mut codes: Vec<(usize, NodeId)> = Vec::new();
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        let c = match codes.iter().find(|(k, _)| *k == item.code) {
            Some(&(_, id)) => id,
            None => {
                let id = g.param(contexts[item.code].reshaped(&[1, CONTEXT_DIM])?);
                codes.push((item.code, id));
                id
            }
        };
        let s = g.constant(Tensor::matrix(1, SEMANTIC_DIM, model.fusion_semantic(item.code))?);
        rows.push(g.concat(&[c, s], 1));
    }
    let input = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0) };
    let m = mlp_graph(g, input, &fusion);
    let batch = heads_graph(g, &heads, &layout, m);

    let mut recon = None;
    for (row, item) in items.iter().enumerate() {
        let layers = batch.layers(g, row);
        let f = g.constant(item.features.clone());
        let pred = mlp_graph(g, f, &layers);
        let t = g.constant(item.target.clone());
        let l = reconstruction_loss(g, pred, t);
        recon = Some(match recon {
            None => l,
            Some(acc) => g.add(acc, l),
        });
    }
    let recon = recon.ok_or(TrainError::EmptyDataset)?;
    let recon = if items.len() == 1 { recon } else { g.scale(recon, 1.0 / items.len() as f64) };

    let (loss, kl) = if model.regularization.uses_gaussian() && items.len() >= 2 {
        let kl = gaussian_kl_graph(g, m);
        let weighted = g.scale(kl, delta);
        (g.add(recon, weighted), Some(kl))
    } else {
        (recon, None)
    };
    Ok(LossNodes {
        loss,
        recon,
        kl,
        heads,
        fusion,
        codes,
    })
}

/// The full-volume objective over `videos`, which use codebook rows
/// `0..videos.len()`.
pub fn dataset_loss(model: &InrvModel, videos: &[VideoTensor], delta: f64) -> Result<f64, TrainError> {
    let mut cache = FeatureCache::new(model.profile.field.num_bands);
    let contexts = context_tensors(model, videos.len())?;
    let items = videos
        .iter()
        .enumerate()
        .map(|(n, v)| {
            Ok(BatchItem {
                code: n,
                features: cache.get(v.dims())?.clone(),
                target: v.as_matrix(),
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut g = Graph::new();
    let nodes = build_loss(&mut g, model, &contexts, &items, delta)?;
    Ok(g.evaluate(nodes.loss)?.item())
}

/// Single-video objective on a flat theta over every pixel.
pub fn single_inr_loss(arch: &FieldArch, theta: &Tensor, video: &VideoTensor) -> Result<f64, TrainError> {
    let dims = video.dims();
    let coords: Vec<[f64; 3]> = (0..dims.num_pixels()).map(|i| dims.coord_of(i)).collect();
    let features = positional_encode(&coords, arch.num_bands)?;
    let layout = layout_theta(arch);
    let mut g = Graph::new();
    let t = g.constant(theta.reshaped(&[layout.total_len])?);
    let layers = bind_theta(&mut g, &layout, t);
    let f = g.constant(features);
    let pred = mlp_graph(&mut g, f, &layers);
    let target = g.constant(video.as_matrix());
    let loss = reconstruction_loss(&mut g, pred, target);
    Ok(g.evaluate(loss)?.item())
}

fn context_tensors(model: &InrvModel, count: usize) -> Result<Vec<Tensor>, TrainError> {
    if count > model.num_codes() {
        return Err(TrainError::CodebookTooSmall {
            videos: count,
            codes: model.num_codes(),
        });
    }
    Ok((0..count)
        .map(|n| Tensor::vector(model.codebook.context(n).to_vec()))
        .collect())
}

/// He-uniform weights and zero biases for a standalone field.
pub fn init_field_theta(arch: &FieldArch, rng: &mut Prng) -> Result<Tensor, TrainError> {
    let layout = layout_theta(arch);
    let mut data = Vec::with_capacity(layout.total_len);
    for &(i, o) in layout.layer_dims() {
        data.extend_from_slice(init_from(&[i, o], InitScheme::UniformFanIn, rng)?.data());
        data.extend(std::iter::repeat_n(0.0, o));
    }
    Ok(Tensor::vector(data))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleFit {
    pub theta: Tensor,
    /// Minibatch loss before each step.
    pub losses: Vec<f64>,
}

/// Fits one field to one video with Adam on random pixel batches.
pub fn fit_single_inr(
    arch: &FieldArch,
    video: &VideoTensor,
    steps: usize,
    lr: f64,
    pixel_batch: usize,
    seed: u64,
) -> Result<SingleFit, TrainError> {
    if !(lr > 0.0) || pixel_batch == 0 {
        return Err(TrainError::Config("lr must be > 0 and pixel batch >= 1".into()));
    }
    let layout = layout_theta(arch);
    let mut init_rng = stream_rng(seed, stream_id("single-inr"));
    let mut theta = init_field_theta(arch, &mut init_rng)?;
    let mut rng = stream_rng(seed, stream_id("single-inr-pixels"));
    let dims = video.dims();
    let mut cache = FeatureCache::new(arch.num_bands);
    let features = cache.get(dims)?.clone();
    let target = video.as_matrix();
    let all = dims.num_pixels();
    let mut order: Vec<usize> = (0..all).collect();
    let mut cursor = all;
    let mut adam = AdamState::for_params(lr, &[&theta]);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (f, t) = if pixel_batch >= all {
            (features.clone(), target.clone())
        } else {
            if cursor + pixel_batch > all {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + pixel_batch];
            cursor += pixel_batch;
            (features.gather_rows(idx), target.gather_rows(idx))
        };
        let mut g = Graph::new();
        let th = g.param(theta.clone());
        let layers = bind_theta(&mut g, &layout, th);
        let fx = g.constant(f);
        let pred = mlp_graph(&mut g, fx, &layers);
        let tx = g.constant(t);
        let loss = reconstruction_loss(&mut g, pred, tx);
        let value = g.evaluate(loss).map_err(|source| TrainError::Divergence {
            stage: 0,
            epoch: step,
            source,
        })?;
        losses.push(value.item());
        let mut grads = g.backward(loss)?;
        let grad = grads.take_or_zeros(th, theta.shape());
        adam_step(&mut [&mut theta], &[&grad], &mut adam)?;
    }
    Ok(SingleFit { theta, losses })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based stage index.
    pub stage: usize,
    /// 0 is the entry evaluation pass.
    pub epoch: usize,
    pub mse: f64,
    pub kl: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} epoch={} mse={:.6e} kl={:.6e}", self.stage, self.epoch, self.mse, self.kl)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub videos: usize,
    pub epochs: Vec<EpochLog>,
    /// Whether the stage ended by reaching the threshold.
    pub converged: bool,
}

impl StageReport {
    pub fn final_mse(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.mse)
    }
}

/// Receives progress from [`train_stage`] and [`train`].
pub trait TrainObserver {
    /// Called by [`train`] once the stage's codebook is in place, before
    /// any update.
    fn stage_start(&mut self, _model: &InrvModel, _stage: usize) {}
    fn epoch(&mut self, _log: &EpochLog) {}
    fn stage_done(&mut self, _model: &InrvModel, _report: &StageReport) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct NoObserver;
impl TrainObserver for NoObserver {}

/// Prints every epoch line to stdout.
pub struct PrintObserver;
impl TrainObserver for PrintObserver {
    fn epoch(&mut self, log: &EpochLog) {
        println!("{log}");
    }
}

/// Full-volume per-pixel MSE averaged over the slice, without updating.
fn evaluate_mse(
    model: &InrvModel,
    contexts: &[Tensor],
    videos: &[VideoTensor],
    cache: &mut FeatureCache,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (n, v) in videos.iter().enumerate() {
        let item = BatchItem {
            code: n,
            features: cache.get(v.dims())?.clone(),
            target: v.as_matrix(),
        };
        let mut g = Graph::new();
        let nodes = build_loss(&mut g, model, contexts, std::slice::from_ref(&item), 0.0)?;
        total += g.evaluate(nodes.recon)?.item();
    }
    Ok(total / videos.len() as f64)
}

/// Jointly optimizes the hypernetwork, fusion network and the context codes
/// of `videos` (codebook rows `0..videos.len()`).
///
/// Non-final stages first evaluate the slice and return untouched if the
/// threshold already holds, and stop after any epoch whose mean minibatch
/// MSE is at or below it. The final stage runs its whole epoch budget.
pub fn train_stage(
    model: &mut InrvModel,
    videos: &[VideoTensor],
    config: &TrainConfig,
    stage: usize,
    last: bool,
    observer: &mut dyn TrainObserver,
) -> Result<StageReport, TrainError> {
    config.validate()?;
    if videos.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut contexts = context_tensors(model, videos.len())?;
    let mut cache = FeatureCache::new(model.profile.field.num_bands);
    let mut report = StageReport {
        stage,
        videos: videos.len(),
        epochs: Vec::new(),
        converged: false,
    };
    let diverged = |epoch: usize| move |source: DiffError| TrainError::Divergence { stage, epoch, source };

    if !last {
        let mse = match evaluate_mse(model, &contexts, videos, &mut cache) {
            Err(TrainError::Diff(e)) => return Err(diverged(0)(e)),
            other => other?,
        };
        let log = EpochLog {
            stage,
            epoch: 0,
            mse,
            kl: 0.0,
        };
        observer.epoch(&log);
        report.epochs.push(log);
        if mse <= config.threshold {
            report.converged = true;
            return Ok(report);
        }
    }

    let mut rng = stream_rng(config.seed, stream_id("train-batches").wrapping_add(stage as u64));
    let mut net_adam = AdamState::for_params(config.lr, &network_tensors(model));
    let mut code_adam: Vec<AdamState> = contexts.iter().map(|c| AdamState::for_params(config.lr, &[c])).collect();

    for epoch in 1..=config.epochs_for(last) {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut rng);
        let (mut mse_sum, mut kl_sum, mut steps, mut kl_steps) = (0.0, 0.0, 0usize, 0usize);
        for group in order.chunks(config.video_batch) {
            let perms: Vec<Vec<usize>> = group
                .iter()
                .map(|&n| {
                    let mut p: Vec<usize> = (0..videos[n].dims().num_pixels()).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            let longest = perms.iter().map(Vec::len).max().expect("non-empty group");
            for start in (0..longest).step_by(config.pixel_batch) {
                let mut items = Vec::with_capacity(group.len());
                for (&n, perm) in group.iter().zip(&perms) {
                    // Shorter videos wrap around their own permutation.
                    let idx: Vec<usize> = (start..start + config.pixel_batch.min(longest - start))
                        .map(|k| perm[k % perm.len()])
                        .collect();
                    let features = cache.get(videos[n].dims())?;
                    items.push(BatchItem {
                        code: n,
                        features: features.gather_rows(&idx),
                        target: videos[n].gather(&idx),
                    });
                }
                let mut g = Graph::new();
                let nodes = build_loss(&mut g, model, &contexts, &items, config.delta)?;
                g.evaluate(nodes.loss).map_err(diverged(epoch))?;
                mse_sum += g.value(nodes.recon).expect("evaluated").item();
                if let Some(kl) = nodes.kl {
                    kl_sum += g.value(kl).expect("evaluated").item();
                    kl_steps += 1;
                }
                steps += 1;
                let mut grads = g.backward(nodes.loss)?;
                // The graph shares tensor storage with the model; drop it so
                // the updates below do not copy.
                drop(g);
                apply_updates(&mut grads, &nodes, model, &mut net_adam, &mut contexts, &mut code_adam)
                    .map_err(diverged(epoch))?;
            }
        }
        let log = EpochLog {
            stage,
            epoch,
            mse: mse_sum / steps as f64,
            kl: if kl_steps > 0 { kl_sum / kl_steps as f64 } else { 0.0 },
        };
        observer.epoch(&log);
        let done = !last && log.mse <= config.threshold;
        report.epochs.push(log);
        if done {
            report.converged = true;
            break;
        }
    }

    for (n, c) in contexts.iter().enumerate() {
        model.codebook.context_mut(n).copy_from_slice(c.data());
    }
    Ok(report)
}

fn network_tensors(model: &InrvModel) -> Vec<&Tensor> {
    model.hyper.tensors().into_iter().chain(model.fusion.tensors()).collect()
}

fn network_tensors_mut(model: &mut InrvModel) -> Vec<&mut Tensor> {
    model
        .hyper
        .tensors_mut()
        .into_iter()
        .chain(model.fusion.tensors_mut())
        .collect()
}

fn apply_updates(
    grads: &mut Gradients,
    nodes: &LossNodes,
    model: &mut InrvModel,
    net_adam: &mut AdamState,
    contexts: &mut [Tensor],
    code_adam: &mut [AdamState],
) -> Result<(), DiffError> {
    let ids = nodes.network_params();
    let net_grads: Vec<Tensor> = ids
        .iter()
        .zip(network_tensors(model))
        .map(|(&id, p)| grads.take_or_zeros(id, p.shape()))
        .collect();
    let mut params = network_tensors_mut(model);
    adam_step(&mut params, &net_grads.iter().collect::<Vec<_>>(), net_adam)?;
    for &(n, id) in &nodes.codes {
        let g = grads.take_or_zeros(id, &[1, CONTEXT_DIM]).reshaped(&[CONTEXT_DIM])?;
        adam_step(&mut [&mut contexts[n]], &[&g], &mut code_adam[n])?;
    }
    Ok(())
}

/// Semantic code of each video under the model's frozen encoder.
pub fn semantic_codes(model: &InrvModel, videos: &[VideoTensor]) -> Result<Vec<Vec<f64>>, TrainError> {
    Ok(videos
        .iter()
        .map(|v| model.encoder.encode_video(v))
        .collect::<Result<_, _>>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: InrvModel,
    pub stages: Vec<StageReport>,
}

/// Progressive training over growing prefixes of `videos`. `semantic`
/// overrides the builtin semantic encoder with precomputed codes.
pub fn train(
    videos: &[VideoTensor],
    semantic: Option<Vec<Vec<f64>>>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if videos.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let schedule = progressive_schedule_from(videos.len(), config.first_stage)?;
    let mut model = InrvModel::new(config.profile.clone(), config.regularization, config.seed)?;
    let semantic = match semantic {
        Some(s) if s.len() == videos.len() => s,
        Some(s) => {
            return Err(TrainError::Config(format!(
                "{} semantic codes for {} videos",
                s.len(),
                videos.len()
            )))
        }
        None => semantic_codes(&model, videos)?,
    };
    let mut stages = Vec::with_capacity(schedule.len());
    for (l, &size) in schedule.iter().enumerate() {
        model.codebook = codebook_resize(&model.codebook, &semantic, size, config.code_sigma, config.seed)?;
        let last = l + 1 == schedule.len();
        observer.stage_start(&model, l + 1);
        let report = train_stage(&mut model, &videos[..size], config, l + 1, last, observer)?;
        observer.stage_done(&model, &report)?;
        stages.push(report);
    }
    Ok(TrainOutcome { model, stages })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Norm-wise relative error per parameter tensor.
    pub groups: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Analytic gradients of the full objective (pixels → θ → heads, fusion,
/// context codes) against central differences, on two random 4×4×2 videos
/// with the test profile and semantic conditioning on.
///
/// Each parameter tensor is probed at its largest-gradient entries plus a
/// few random ones.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport, TrainError> {
    let profile = ArchProfile::test();
    let mut model = InrvModel::new(profile, Regularization::Semantic, seed)?;
    let dims = VideoDims::new(2, 4, 4)?;
    let mut rng = stream_rng(seed, stream_id("gradcheck"));
    let videos: Vec<VideoTensor> = (0..2)
        .map(|_| {
            let t = init_from(&[dims.num_pixels() * 3], InitScheme::Uniform(1.0), &mut rng)?;
            Ok(VideoTensor::new(dims, t.data().iter().map(|v| v.abs()).collect())?)
        })
        .collect::<Result<_, TrainError>>()?;
    let semantic = semantic_codes(&model, &videos)?;
    // Unit-scale context codes keep their gradients well above
    // finite-difference noise.
    model.register_semantic(semantic, 1.0)?;
    let delta = 1.0;

    let mut cache = FeatureCache::new(model.profile.field.num_bands);
    let items: Vec<BatchItem> = videos
        .iter()
        .enumerate()
        .map(|(n, v)| {
            Ok(BatchItem {
                code: n,
                features: cache.get(v.dims())?.clone(),
                target: v.as_matrix(),
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let contexts = context_tensors(&model, 2)?;

    let mut g = Graph::new();
    let nodes = build_loss(&mut g, &model, &contexts, &items, delta)?;
    g.evaluate(nodes.loss)?;
    let grads = g.backward(nodes.loss)?;

    let loss_with = |model: &InrvModel, contexts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let nodes = build_loss(&mut g, model, contexts, &items, delta).expect("loss graph");
        g.evaluate(nodes.loss).expect("finite loss").item()
    };

    // Parameter groups: (name, node, accessor index).
    let mut names: Vec<String> = model.named_weights().into_iter().map(|(n, _)| n).collect();
    names.truncate(model.hyper.tensors().len() + model.fusion.tensors().len());
    let ids = nodes.network_params();
    let mut groups = Vec::new();
    let probes = 4;

    for (k, (name, &id)) in names.iter().zip(&ids).enumerate() {
        let analytic = grads.get(id).map(|t| t.data().to_vec()).unwrap_or_default();
        let picks = probe_indices(&analytic, probes, &mut rng);
        let mut a = Vec::new();
        let mut fd = Vec::new();
        for &i in &picks {
            let eval = |delta_x: f64| {
                let mut m = model.clone();
                network_tensors_mut(&mut m)[k].data_mut()[i] += delta_x;
                loss_with(&m, &contexts)
            };
            fd.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
            a.push(analytic[i]);
        }
        groups.push((name.clone(), relative_error(&a, &fd)));
    }
    for &(n, id) in &nodes.codes {
        let analytic = grads.get(id).expect("code gradient").data().to_vec();
        let picks = probe_indices(&analytic, probes, &mut rng);
        let mut a = Vec::new();
        let mut fd = Vec::new();
        for &i in &picks {
            let eval = |delta_x: f64| {
                let mut c = contexts.clone();
                c[n].data_mut()[i] += delta_x;
                loss_with(&model, &c)
            };
            fd.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
            a.push(analytic[i]);
        }
        groups.push((format!("codebook.context[{n}]"), relative_error(&a, &fd)));
    }
    let max_rel_error = groups.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradcheckReport { groups, max_rel_error })
}

/// The `count` largest-magnitude entries plus `count` random others.
fn probe_indices(values: &[f64], count: usize, rng: &mut Prng) -> Vec<usize> {
    let mut by_size: Vec<usize> = (0..values.len()).collect();
    by_size.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut picks: Vec<usize> = by_size.iter().take(count).copied().collect();
    let mut rest: Vec<usize> = by_size.into_iter().skip(count).collect();
    rest.shuffle(rng);
    picks.extend(rest.into_iter().take(count));
    picks
}
