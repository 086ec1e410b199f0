mod config;
mod error;
mod io;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use inrv::dataio::{
    gen_bouncing_ball, read_checkpoint, write_checkpoint, BouncingBallSpec, CheckpointInfo,
};
use inrv::field::{render_video, RenderOptions, VideoDims, VideoTensor};
use inrv::hypernet::{semantic_encode, InrvModel, SemanticInput};
use inrv::inversion::{build_mask, invert, superresolve, InversionConfig, InversionResult, MaskKind};
use inrv::metrics::{psnr, MetricKind, MetricReport};
use inrv::sampler::{
    export_latents, import_latents, interpolate_videos, sample_latents, write_latents_csv, SampleMode,
};
use inrv::trainer::{fit_single_inr, gradcheck, train, EpochLog, StageReport, TrainError, TrainObserver};

use config::RunConfig;
use error::{usage, CliError};

#[derive(Parser, Debug)]
#[command(name = "inrv", version, about = "Video INRs generated by a latent-conditioned hypernetwork")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a BouncingBall dataset as .rvid files
    GenData(GenDataArgs),
    /// Fit one standalone field to one video
    FitSingle(FitSingleArgs),
    /// Progressive hypernetwork training
    Train(TrainArgs),
    /// Render a training video from its code
    Reconstruct(ReconstructArgs),
    /// Draw new latents and render them
    Sample(SampleArgs),
    /// Slerp between two training codes
    Interpolate(InterpolateArgs),
    /// Fit a latent to a partially observed video
    Invert(InvertArgs),
    /// Invert a low-resolution video and render it larger
    Superresolve(SuperresolveArgs),
    /// Render a training code or a latent from a CSV file
    Render(RenderArgs),
    /// Compare predicted videos with ground truth
    Metrics(MetricsArgs),
    /// Write the instance codes as CSV
    ExportLatents(ExportArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone, Copy, Default)]
struct DimArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Frame side; the ball dataset is square
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitSingleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    video: PathBuf,
    /// Where to write the fitted field's render
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    /// Ground truth; PSNR is reported when given
    #[arg(long)]
    video: Option<PathBuf>,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// slerp-pairs or gaussian-fit
    #[arg(long, default_value = "slerp-pairs")]
    mode: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct InvertArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    video: PathBuf,
    /// full, top-half, first-k, endpoints, sparse or lowres
    #[arg(long, default_value = "full")]
    mask: String,
    /// k for first-k, the visible fraction for sparse
    #[arg(long)]
    mask_param: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Output grid for the lowres mask
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct SuperresolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// CSV of latents (from sample, invert or export-latents)
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Row of --latents, or training code index
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Predicted video or dataset directory
    #[arg(long)]
    video: PathBuf,
    /// Ground-truth video or dataset directory
    #[arg(long)]
    data: PathBuf,
    /// psnr, ssim, error_e or all
    #[arg(long, default_value = "all")]
    mode: String,
    /// CSV report path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::FitSingle(a) => fit_single(a),
        Command::Train(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Sample(a) => sample(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Invert(a) => invert_cmd(a),
        Command::Superresolve(a) => superresolve_cmd(a),
        Command::Render(a) => render(a),
        Command::Metrics(a) => metrics(a),
        Command::ExportLatents(a) => {
            let (model, _) = load_checkpoint(&a.ckpt)?;
            export_latents(&model, &a.out)?;
            println!("wrote {} codes to {}", model.num_codes(), a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck(a) => {
            let report = gradcheck(a.seed)?;
            for (name, err) in &report.groups {
                println!("{name:<28} {err:.3e}");
            }
            println!("max relative gradient error: {:.3e}", report.max_rel_error);
            Ok(if report.max_rel_error <= 1e-6 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn log_config(config: &RunConfig) -> String {
    let resolved = config.resolved();
    for line in resolved.lines() {
        println!("config {line}");
    }
    let hash = config.hash();
    println!("config_hash {hash}");
    hash
}

fn render_opts(config_chunk: usize, threads: Option<usize>) -> Result<RenderOptions, CliError> {
    let threads = threads.unwrap_or(1);
    if threads == 0 {
        return Err(usage("--threads must be >= 1"));
    }
    Ok(RenderOptions {
        chunk_size: config_chunk,
        threads,
    })
}

fn load_checkpoint(path: &Path) -> Result<(InrvModel, CheckpointInfo), CliError> {
    Ok(read_checkpoint(path)?)
}

/// Output size: explicit flags win, then the checkpoint's training size.
fn resolve_dims(dims: DimArgs, info: &CheckpointInfo) -> Result<VideoDims, CliError> {
    let base = info.dims;
    let pick = |flag: Option<usize>, stored: Option<usize>, name: &str| {
        flag.or(stored)
            .ok_or_else(|| usage(format!("--{name} is required: the checkpoint does not record a video size")))
    };
    let frames = pick(dims.frames, base.map(|d| d.frames), "frames")?;
    let height = pick(dims.height, base.map(|d| d.height), "height")?;
    let width = pick(dims.width, base.map(|d| d.width), "width")?;
    VideoDims::new(frames, height, width).map_err(|e| usage(e.to_string()))
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode, CliError> {
    if a.width.is_some_and(|w| w != a.height) {
        return Err(usage("the ball dataset is square: --width must equal --height"));
    }
    if a.count == 0 || a.height == 0 || a.frames == 0 {
        return Err(usage("--count, --height and --frames must be >= 1"));
    }
    let spec = BouncingBallSpec {
        count: a.count,
        size: a.height,
        frames: a.frames,
        seed: a.seed,
    };
    let paths = gen_bouncing_ball(&spec, &a.out)?;
    println!(
        "wrote {} videos of {}x{}x{} to {}",
        paths.len(),
        a.frames,
        a.height,
        a.height,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn fit_single(a: FitSingleArgs) -> Result<ExitCode, CliError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        config.single_steps = s;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(t) = a.threads {
        config.threads = t;
    }
    config.validate()?;
    log_config(&config);
    let video = io::load_video(&a.video)?;
    let arch = config.train.profile.field;
    let start = Instant::now();
    let fit = fit_single_inr(
        &arch,
        &video,
        config.single_steps,
        config.single_lr,
        config.train.pixel_batch,
        config.train.seed,
    )?;
    for (step, loss) in fit.losses.iter().enumerate() {
        if step % 50 == 0 || step + 1 == fit.losses.len() {
            println!("step={step} mse={loss:.6e}");
        }
    }
    let out = render_video(&arch, &fit.theta, video.dims(), render_opts(config.chunk_size, a.threads)?)?;
    println!("psnr={:.4} time={:.1}s", psnr(&out, &video)?, start.elapsed().as_secs_f64());
    if let Some(path) = a.out {
        io::save_video(&path, &out)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Prints progress and writes a checkpoint after every stage.
struct StageWriter {
    dir: PathBuf,
    dims: Option<VideoDims>,
    hash: String,
    failure: Option<CliError>,
}

impl TrainObserver for StageWriter {
    fn epoch(&mut self, log: &EpochLog) {
        println!("{log}");
    }

    fn stage_done(&mut self, model: &InrvModel, report: &StageReport) -> Result<(), TrainError> {
        let path = self.dir.join(format!("stage_{}.inrv", report.stage));
        let info = CheckpointInfo {
            dims: self.dims,
            stage: report.stage,
            config_hash: self.hash.clone(),
        };
        if let Err(e) = write_checkpoint(&path, model, &info) {
            let msg = e.to_string();
            self.failure = Some(e.into());
            return Err(TrainError::Config(msg));
        }
        println!(
            "stage {} done: {} videos, {} epochs, converged={}, mse={:.6e}, wrote {}",
            report.stage,
            report.videos,
            report.epochs.len(),
            report.converged,
            report.final_mse(),
            path.display()
        );
        Ok(())
    }
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode, CliError> {
    let mut config = load_config(a.config.as_deref())?;
    if a.data.is_some() {
        config.data = a.data;
    }
    if a.out.is_some() {
        config.out = a.out;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(t) = a.threads {
        config.threads = t;
    }
    config.validate()?;
    let data = config.data.clone().ok_or_else(|| usage("no dataset: pass --data or set 'data' in the config"))?;
    let out = config.out.clone().ok_or_else(|| usage("no output directory: pass --out or set 'out' in the config"))?;
    let hash = log_config(&config);

    let (paths, videos) = io::load_dataset(&data)?;
    println!("loaded {} videos from {}", videos.len(), data.display());
    let semantic = match &config.embeddings {
        Some(dir) => {
            let probe = InrvModel::new(config.train.profile.clone(), config.train.regularization, config.train.seed)?;
            let codes = paths
                .iter()
                .zip(&videos)
                .map(|(p, v)| {
                    let rows = io::load_embeddings(dir, p)?;
                    let input = SemanticInput::Embeddings {
                        rows: &rows,
                        frames: v.dims().frames,
                    };
                    Ok(semantic_encode(&probe.encoder, input)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Some(codes)
        }
        None => None,
    };

    io::create_dir(&out)?;
    io::write_text(&out.join("config.txt"), &config.resolved())?;
    let first = videos[0].dims();
    let mut observer = StageWriter {
        dir: out.clone(),
        dims: videos.iter().all(|v| v.dims() == first).then_some(first),
        hash: hash.clone(),
        failure: None,
    };
    let start = Instant::now();
    let outcome = match train(&videos, semantic, &config.train, &mut observer) {
        Ok(o) => o,
        Err(e) => return Err(observer.failure.take().unwrap_or_else(|| e.into())),
    };
    let final_path = out.join("final.inrv");
    let info = CheckpointInfo {
        dims: observer.dims,
        stage: outcome.stages.len(),
        config_hash: hash,
    };
    write_checkpoint(&final_path, &outcome.model, &info)?;
    println!(
        "training done in {:.1}s: {} stages, wrote {}",
        start.elapsed().as_secs_f64(),
        outcome.stages.len(),
        final_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn reconstruct(a: ReconstructArgs) -> Result<ExitCode, CliError> {
    let (model, info) = load_checkpoint(&a.ckpt)?;
    let truth = a.video.as_deref().map(io::load_video).transpose()?;
    let mut dims = a.dims;
    if let Some(t) = &truth {
        let d = t.dims();
        dims.frames = dims.frames.or(Some(d.frames));
        dims.height = dims.height.or(Some(d.height));
        dims.width = dims.width.or(Some(d.width));
    }
    let dims = resolve_dims(dims, &info)?;
    let video = model.render(a.index, dims, render_opts(8192, a.threads)?)?;
    if let Some(t) = &truth {
        println!("psnr={:.4}", psnr(&video, t)?);
    }
    io::save_video(&a.out, &video)?;
    println!("wrote {} ({}x{}x{})", a.out.display(), dims.frames, dims.height, dims.width);
    Ok(ExitCode::SUCCESS)
}

fn write_latents(path: &Path, latents: &[Vec<f64>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    write_latents_csv(file, latents)?;
    Ok(())
}

fn sample(a: SampleArgs) -> Result<ExitCode, CliError> {
    let mode: SampleMode = a.mode.parse()?;
    if a.count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    let (model, info) = load_checkpoint(&a.ckpt)?;
    let dims = resolve_dims(a.dims, &info)?;
    let opts = render_opts(8192, a.threads)?;
    let drawn = sample_latents(&model, mode, a.count, a.seed)?;
    io::create_dir(&a.out)?;
    let mut provenance = String::new();
    for (n, s) in drawn.iter().enumerate() {
        let video = model.render_latent(&s.latent, dims, opts)?;
        let path = a.out.join(format!("sample_{n:04}.rvid"));
        io::save_video(&path, &video)?;
        println!("sample {n}: {}", s.provenance);
        provenance.push_str(&format!("{n},{}\n", s.provenance));
    }
    let latents: Vec<Vec<f64>> = drawn.into_iter().map(|s| s.latent).collect();
    write_latents(&a.out.join("latents.csv"), &latents)?;
    io::write_text(&a.out.join("provenance.txt"), &provenance)?;
    println!("wrote {} samples to {}", latents.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn interpolate(a: InterpolateArgs) -> Result<ExitCode, CliError> {
    let (model, info) = load_checkpoint(&a.ckpt)?;
    let dims = resolve_dims(a.dims, &info)?;
    let path = interpolate_videos(&model, a.a, a.b, a.steps, dims, render_opts(8192, a.threads)?)?;
    io::create_dir(&a.out)?;
    for (k, video) in path.iter().enumerate() {
        io::save_video(&a.out.join(format!("step_{k:02}.rvid")), video)?;
    }
    println!("wrote {} videos from code {} to code {} in {}", path.len(), a.a, a.b, a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// `--mask` plus `--mask-param` as a mask kind; lowres needs the output size.
fn mask_kind(name: &str, param: Option<&str>, observed: VideoDims) -> Result<MaskKind, CliError> {
    let need_none = |kind: MaskKind| match param {
        None => Ok(kind),
        Some(p) => Err(usage(format!("--mask {name} takes no --mask-param (got '{p}')"))),
    };
    match name {
        "full" => need_none(MaskKind::Full),
        "top-half" => need_none(MaskKind::TopHalf),
        "endpoints" => need_none(MaskKind::Endpoints),
        "lowres" => need_none(MaskKind::LowRes {
            height: observed.height,
            width: observed.width,
        }),
        "first-k" | "first" => {
            let k = param.unwrap_or("4");
            Ok(MaskKind::FirstFrames(
                k.parse().map_err(|_| usage(format!("--mask-param '{k}' is not a frame count")))?,
            ))
        }
        "sparse" => {
            let p = param.unwrap_or("0.25");
            Ok(MaskKind::Sparse(
                p.parse().map_err(|_| usage(format!("--mask-param '{p}' is not a fraction")))?,
            ))
        }
        other => match param {
            None => other.parse().map_err(|_| usage(format!("unknown --mask '{other}'"))),
            Some(_) => Err(usage(format!("unknown --mask '{other}'"))),
        },
    }
}

fn inversion_config(
    config: Option<&Path>,
    steps: Option<usize>,
    seed: u64,
    threads: Option<usize>,
) -> Result<InversionConfig, CliError> {
    let c = load_config(config)?;
    Ok(InversionConfig {
        steps: steps.unwrap_or(c.inversion_steps),
        lr: c.inversion_lr,
        pixel_batch: None,
        seed,
        render: render_opts(c.chunk_size, threads.or(Some(c.threads)))?,
    })
}

fn report_inversion(r: &InversionResult) {
    let last = r.trace.len() - 1;
    for (step, loss) in r.trace.iter().enumerate() {
        if step % 50 == 0 || step == last {
            println!("step={step} masked_mse={loss:.6e}");
        }
    }
    println!(
        "initial_loss={:.6e} final_loss={:.6e} context_l1={:.4}",
        r.initial_loss(),
        r.final_loss(),
        r.context_l1
    );
}

fn invert_cmd(a: InvertArgs) -> Result<ExitCode, CliError> {
    let config = inversion_config(a.config.as_deref(), a.steps, a.seed, a.threads)?;
    let (model, info) = load_checkpoint(&a.ckpt)?;
    let observed = io::load_video(&a.video)?;
    let kind = mask_kind(&a.mask, a.mask_param.as_deref(), observed.dims())?;
    // A lowres mask spans the output grid; every other mask the observation's.
    let grid = if let MaskKind::LowRes { .. } = kind {
        let o = observed.dims();
        let dims = DimArgs {
            frames: a.dims.frames.or(Some(o.frames)),
            ..a.dims
        };
        resolve_dims(dims, &info)?
    } else {
        observed.dims()
    };
    let mask = build_mask(kind, grid, a.seed)?;
    println!("mask={kind} S={} of {} pixels", mask.len(), grid.num_pixels());
    let result = invert(&model, &observed, &mask, None, &config)?;
    report_inversion(&result);
    io::create_dir(&a.out)?;
    write_latents(&a.out.join("latent.csv"), std::slice::from_ref(&result.latent))?;
    io::save_video(&a.out.join("inverted.rvid"), &result.video)?;
    if grid != observed.dims() {
        let full = model.render_latent(&result.latent, grid, config.render)?;
        io::save_video(&a.out.join("rendered.rvid"), &full)?;
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn superresolve_cmd(a: SuperresolveArgs) -> Result<ExitCode, CliError> {
    let config = inversion_config(a.config.as_deref(), a.steps, a.seed, a.threads)?;
    let (model, _) = load_checkpoint(&a.ckpt)?;
    let low = io::load_video(&a.video)?;
    let (result, video) = superresolve(&model, &low, a.height, a.width, &config)?;
    report_inversion(&result);
    io::save_video(&a.out, &video)?;
    let d = video.dims();
    println!("wrote {} ({}x{}x{})", a.out.display(), d.frames, d.height, d.width);
    Ok(ExitCode::SUCCESS)
}

fn render(a: RenderArgs) -> Result<ExitCode, CliError> {
    let (model, info) = load_checkpoint(&a.ckpt)?;
    let dims = resolve_dims(a.dims, &info)?;
    let opts = render_opts(8192, a.threads)?;
    let video = match &a.latents {
        Some(path) => {
            let rows = import_latents(path)?;
            let latent = rows.get(a.index).ok_or_else(|| {
                usage(format!("--index {} out of range: {} has {} latents", a.index, path.display(), rows.len()))
            })?;
            model.render_latent(latent, dims, opts)?
        }
        None => model.render(a.index, dims, opts)?,
    };
    io::save_video(&a.out, &video)?;
    println!("wrote {} ({}x{}x{})", a.out.display(), dims.frames, dims.height, dims.width);
    Ok(ExitCode::SUCCESS)
}

fn load_many(path: &Path) -> Result<Vec<VideoTensor>, CliError> {
    if path.is_dir() && io::dataset_paths(path).is_ok() && inrv::dataio::read_frame_dir(path).is_err() {
        Ok(io::load_dataset(path)?.1)
    } else {
        Ok(vec![io::load_video(path)?])
    }
}

fn metrics(a: MetricsArgs) -> Result<ExitCode, CliError> {
    let kinds = match a.mode.as_str() {
        "psnr" => vec![MetricKind::Psnr],
        "ssim" => vec![MetricKind::Ssim],
        "error_e" => vec![MetricKind::ErrorE],
        "all" => vec![MetricKind::Psnr, MetricKind::Ssim, MetricKind::ErrorE],
        other => return Err(usage(format!("unknown --mode '{other}' (psnr, ssim, error_e, all)"))),
    };
    let pred = load_many(&a.video)?;
    let truth = load_many(&a.data)?;
    if pred.len() != truth.len() {
        return Err(CliError::Data(format!(
            "{} predicted videos but {} ground-truth videos",
            pred.len(),
            truth.len()
        )));
    }
    let pairs: Vec<(&VideoTensor, &VideoTensor)> = pred.iter().zip(&truth).collect();
    let mut csv = String::new();
    for kind in kinds {
        let report = MetricReport::compute(kind, &pairs)?;
        println!("{kind} {:.6} (pixels on {})", report.aggregate, report.pixel_range);
        csv.push_str(&report.to_csv());
    }
    if let Some(out) = &a.out {
        io::write_text(out, &csv)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}
