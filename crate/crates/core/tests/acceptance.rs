//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use inrv::dataio::{
    ball_video, blue_centroid_height, bouncing_ball_params, bouncing_ball_videos, decode_checkpoint, decode_rvid,
    encode_checkpoint, encode_rvid, read_rvid, write_rvid, BallParams, BouncingBallSpec, CheckpointInfo,
};
use inrv::diffcore::{init_from, stream_rng, InitScheme};
use inrv::field::{render_video, RenderOptions, VideoDims, VideoTensor};
use inrv::hypernet::{ArchProfile, InrvModel, Regularization};
use inrv::inversion::{build_mask, invert, InversionConfig, MaskKind};
use inrv::metrics::{context_l1, error_e, psnr, ssim};
use inrv::sampler::interpolate_videos;
use inrv::trainer::{
    dataset_loss, fit_single_inr, gaussian_kl, gradcheck, semantic_codes, single_inr_loss, train, EpochLog,
    StageReport, TrainConfig, TrainError, TrainObserver, DEFAULT_SINGLE_STEPS,
};

const SIZE: usize = 32;
const FRAMES: usize = 16;
const VIDEOS: usize = 50;
const PROBES: [usize; 5] = [0, 12, 24, 36, 49];

/// Single-video fits: 750 steps at lr 1e-2 on full-volume-sized batches.
const SINGLE_LR: f64 = 1e-2;
const SINGLE_BATCH: usize = 4096;

/// Hypernetwork training: many small steps; lr 1e-3.
fn hypernet_config() -> TrainConfig {
    TrainConfig {
        profile: ArchProfile::test(),
        regularization: Regularization::Semantic,
        lr: 1e-3,
        threshold: 1e-3,
        max_epochs: 30,
        final_epochs: Some(50),
        pixel_batch: 1024,
        video_batch: 2,
        seed: 0,
        ..TrainConfig::default()
    }
}

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    let o = Outcome { id, name, pass, detail };
    println!(
        "criterion {:>2} {}: {} ({})",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail
    );
    o
}

fn dims(t: usize, h: usize, w: usize) -> VideoDims {
    VideoDims::new(t, h, w).expect("positive dims")
}

fn random_video(d: VideoDims, seed: u64) -> VideoTensor {
    let mut rng = stream_rng(seed, 4242);
    let t = init_from(&[d.num_pixels() * 3], InitScheme::Uniform(1.0), &mut rng).expect("init");
    VideoTensor::new(d, t.data().iter().map(|v| v.abs()).collect()).expect("in range")
}

fn dataset() -> Vec<(BallParams, VideoTensor)> {
    bouncing_ball_videos(&BouncingBallSpec {
        count: VIDEOS,
        size: SIZE,
        frames: FRAMES,
        seed: 0,
    })
}

// ---------------------------------------------------------------------------
// Independent metric references: direct loops over [0, 255] pixels.

fn ref_mse(a: &VideoTensor, b: &VideoTensor) -> f64 {
    let n = a.pixels().len() as f64;
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| (255.0 * x - 255.0 * y).powi(2)).sum::<f64>() / n
}

fn ref_psnr(a: &VideoTensor, b: &VideoTensor) -> f64 {
    let mse = ref_mse(a, b);
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

fn ref_ssim(a: &VideoTensor, b: &VideoTensor) -> f64 {
    let d = a.dims();
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (u, row) in w.iter_mut().enumerate() {
        for (v, x) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *x = (-(du * du + dv * dv) / (2.0 * 1.5 * 1.5)).exp();
            total += *x;
        }
    }
    let mut acc = 0.0;
    for t in 0..d.frames {
        for c in 0..3 {
            let mut sum = 0.0;
            let mut count = 0;
            for i in 0..=d.height - 11 {
                for j in 0..=d.width - 11 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (u, row) in w.iter().enumerate() {
                        for (v, wt) in row.iter().enumerate() {
                            let k = wt / total;
                            let x = 255.0 * a.rgb(t, i + u, j + v)[c];
                            let y = 255.0 * b.rgb(t, i + u, j + v)[c];
                            mx += k * x;
                            my += k * y;
                            xx += k * x * x;
                            yy += k * y * y;
                            xy += k * x * y;
                        }
                    }
                    let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            acc += sum / count as f64;
        }
    }
    acc / (3 * d.frames) as f64
}

fn ref_context_l1(a: &VideoTensor, b: &VideoTensor, idx: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in idx {
        for c in 0..3 {
            s += (255.0 * a.pixels()[3 * i + c] - 255.0 * b.pixels()[3 * i + c]).abs();
        }
    }
    s / (3 * idx.len()) as f64
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// PSNR restricted to a set of pixel indices.
fn psnr_on(a: &VideoTensor, b: &VideoTensor, idx: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in idx {
        for c in 0..3 {
            s += (255.0 * (a.pixels()[3 * i + c] - b.pixels()[3 * i + c])).powi(2);
        }
    }
    let mse = s / (3 * idx.len()) as f64;
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = gradcheck(7).expect("gradcheck runs");
    let elapsed = start.elapsed();
    check(
        1,
        "gradient oracle",
        report.max_rel_error <= 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "max rel error {:.3e} over {} tensors in {:.1}s",
            report.max_rel_error,
            report.groups.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(video: &VideoTensor) -> Outcome {
    let mut model = InrvModel::new(ArchProfile::test(), Regularization::Semantic, 3).expect("model");
    let g = semantic_codes(&model, std::slice::from_ref(video)).expect("semantic");
    model.register_semantic(g, 0.01).expect("codebook");
    let theta = model.theta_for(0).expect("theta");
    let single = single_inr_loss(&model.profile.field, &theta, video).expect("single loss");
    let trainer = dataset_loss(&model, std::slice::from_ref(video), 1.0).expect("trainer loss");
    check(
        2,
        "single-video objective reduction",
        single.to_bits() == trainer.to_bits(),
        format!("trainer {trainer:e}, single {single:e}"),
    )
}

fn single_psnr(video: &VideoTensor) -> f64 {
    let arch = ArchProfile::test().field;
    let fit = fit_single_inr(&arch, video, DEFAULT_SINGLE_STEPS, SINGLE_LR, SINGLE_BATCH, 0).expect("single fit");
    let out = render_video(&arch, &fit.theta, video.dims(), RenderOptions::default()).expect("render");
    psnr(&out, video).expect("psnr")
}

fn criterion_3(first_probe: f64) -> Outcome {
    check(
        3,
        "single-video fit",
        first_probe >= 28.0,
        format!("PSNR {first_probe:.2} dB after {DEFAULT_SINGLE_STEPS} steps"),
    )
}

/// Records stage boundaries to verify carryover of codes and weights.
#[derive(Default)]
struct Carryover {
    last: Option<InrvModel>,
    ok: bool,
    checked: usize,
    started: Option<Instant>,
}

impl TrainObserver for Carryover {
    fn stage_start(&mut self, model: &InrvModel, _stage: usize) {
        if let Some(prev) = &self.last {
            let n = prev.num_codes();
            let same = model.codebook.context_rows()[..n] == prev.codebook.context_rows()[..]
                && model.codebook.semantic_rows()[..n] == prev.codebook.semantic_rows()[..]
                && model.hyper == prev.hyper
                && model.fusion == prev.fusion;
            self.ok &= same;
            self.checked += 1;
        }
    }

    fn epoch(&mut self, _log: &EpochLog) {}

    fn stage_done(&mut self, model: &InrvModel, report: &StageReport) -> Result<(), TrainError> {
        let started = self.started.get_or_insert_with(Instant::now);
        println!(
            "  stage {} ({} videos): {} epochs, final mse {:.3e}, {:.0}s elapsed",
            report.stage,
            report.videos,
            report.epochs.len(),
            report.final_mse(),
            started.elapsed().as_secs_f64()
        );
        self.last = Some(model.clone());
        Ok(())
    }
}

struct Trained {
    model: InrvModel,
    outcome: Outcome,
}

fn criterion_4(data: &[(BallParams, VideoTensor)], single_probe: &[f64]) -> Trained {
    let videos: Vec<VideoTensor> = data.iter().map(|(_, v)| v.clone()).collect();
    let config = hypernet_config();
    let start = Instant::now();
    let mut obs = Carryover {
        ok: true,
        started: Some(start),
        ..Carryover::default()
    };
    let out = train(&videos, None, &config, &mut obs).expect("training");
    let elapsed = start.elapsed();
    let sizes: Vec<usize> = out.stages.iter().map(|s| s.videos).collect();
    let opts = RenderOptions::default();
    let all: Vec<f64> = videos
        .iter()
        .enumerate()
        .map(|(n, v)| psnr(&out.model.render(n, v.dims(), opts).expect("render"), v).expect("psnr"))
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let probe: f64 = PROBES.iter().map(|&n| all[n]).sum::<f64>() / PROBES.len() as f64;
    let single: f64 = single_probe.iter().sum::<f64>() / single_probe.len() as f64;
    let pass = sizes == [1, 10, 50]
        && obs.ok
        && obs.checked == 2
        && mean >= 24.0
        && probe <= single
        && elapsed <= Duration::from_secs(2 * 3600);
    let outcome = check(
        4,
        "hypernetwork training",
        pass,
        format!(
            "stages {sizes:?}, carryover {}, mean PSNR {mean:.2} dB, probe {probe:.2} dB vs single {single:.2} dB, {:.0}s",
            if obs.ok && obs.checked == 2 { "exact" } else { "BROKEN" },
            elapsed.as_secs_f64()
        ),
    );
    Trained {
        model: out.model,
        outcome,
    }
}

fn mean_height(video: &VideoTensor) -> Option<f64> {
    let hs: Vec<f64> = (0..video.dims().frames).filter_map(|t| blue_centroid_height(video, t)).collect();
    (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64)
}

fn criterion_5(model: &InrvModel) -> Outcome {
    let d = dims(FRAMES, SIZE, SIZE);
    let opts = RenderOptions::default();
    let path = interpolate_videos(model, 0, VIDEOS - 1, 8, d, opts).expect("interpolation");
    let ends = path[0] == model.render(0, d, opts).expect("render")
        && path[7] == model.render(VIDEOS - 1, d, opts).expect("render");
    let heights: Option<Vec<f64>> = path.iter().map(mean_height).collect();
    let Some(h) = heights else {
        return check(5, "interpolation structure", false, "a frame path lost the ball".into());
    };
    let (lo, hi) = (h[0].min(h[7]), h[0].max(h[7]));
    let bracketed = h[1..7].iter().all(|&x| lo < x && x < hi);
    let dir = (h[7] - h[0]).signum();
    let violations = h.windows(2).filter(|w| (w[1] - w[0]) * dir < 0.0).count();
    let pretty: Vec<String> = h.iter().map(|x| format!("{x:.2}")).collect();
    check(
        5,
        "interpolation structure",
        ends && bracketed && violations <= 1,
        format!(
            "heights [{}], {} order violations, endpoints {}",
            pretty.join(", "),
            violations,
            if ends { "exact" } else { "DIFFER" }
        ),
    )
}

fn criterion_6(model: &InrvModel) -> Outcome {
    let opts = RenderOptions::default();
    let renders: Vec<VideoTensor> = [SIZE, 64, 100]
        .iter()
        .map(|&s| model.render(7, dims(FRAMES, s, s), opts).expect("render"))
        .collect();
    let corners = |v: &VideoTensor| -> Vec<[f64; 3]> {
        let d = v.dims();
        (0..d.frames)
            .flat_map(|t| {
                [(0, 0), (0, d.width - 1), (d.height - 1, 0), (d.height - 1, d.width - 1)].map(|(h, w)| v.rgb(t, h, w))
            })
            .collect()
    };
    let base = corners(&renders[0]);
    let corners_ok = renders[1..].iter().all(|v| corners(v) == base);
    let again = model.render(7, dims(FRAMES, 100, 100), opts).expect("render");
    let chunked = model
        .render(
            7,
            dims(FRAMES, 100, 100),
            RenderOptions {
                chunk_size: 997,
                threads: 1,
            },
        )
        .expect("render");
    let deterministic = again == renders[2];
    let invariant = chunked == renders[2];
    check(
        6,
        "multi-resolution inference",
        corners_ok && deterministic && invariant,
        format!("corners identical: {corners_ok}, deterministic: {deterministic}, chunk-invariant: {invariant}"),
    )
}

fn criterion_7(model: &InrvModel, params: &[BallParams]) -> Outcome {
    // Midway between two training heights, so no training video matches.
    let held = BallParams {
        height: (params[24].height + params[25].height) / 2.0,
        x0: 0.4,
        direction: 1.0,
        ..params[0]
    };
    let video = ball_video(&held);
    let d = video.dims();
    let config = InversionConfig::default();
    let run = |kind: MaskKind| {
        let mask = build_mask(kind, d, 0).expect("mask");
        let r = invert(model, &video, &mask, None, &config).expect("inversion");
        (mask, r)
    };
    let (_, full) = run(MaskKind::Full);
    let (sparse_mask, sparse) = run(MaskKind::Sparse(0.25));
    let unseen: Vec<usize> = (0..d.num_pixels())
        .filter(|i| sparse_mask.indices.binary_search(i).is_err())
        .collect();
    let sparse_psnr = psnr_on(&sparse.video, &video, &unseen);
    let full_psnr = psnr_on(&full.video, &video, &unseen);
    let mut partial = Vec::new();
    let mut partial_ok = true;
    for kind in [MaskKind::TopHalf, MaskKind::FirstFrames(4), MaskKind::Endpoints] {
        let (_, r) = run(kind);
        partial_ok &= r.final_loss() < r.initial_loss();
        partial.push(format!("{kind} {:.2e}->{:.2e}", r.initial_loss(), r.final_loss()));
    }
    check(
        7,
        "inversion suite",
        full.context_l1 <= 15.0 && (sparse_psnr - full_psnr).abs() <= 3.0 && partial_ok,
        format!(
            "full Context-L1 {:.2}; sparse-25% unseen PSNR {sparse_psnr:.2} vs full {full_psnr:.2} dB; {}",
            full.context_l1,
            partial.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let zero = gaussian_kl(&[vec![1.0, -1.0, 1.0], vec![-1.0, 1.0, -1.0]]).expect("kl");
    let half = gaussian_kl(&[vec![2.0, 2.0], vec![0.0, 0.0]]).expect("kl");
    let videos = [random_video(dims(2, 4, 4), 1), random_video(dims(2, 4, 4), 2)];
    let mut model = InrvModel::new(ArchProfile::test(), Regularization::Gaussian, 5).expect("model");
    model.register_semantic(vec![vec![0.0; 512]; 2], 0.5).expect("codes");
    let plain = InrvModel {
        regularization: Regularization::None,
        ..model.clone()
    };
    let regularized = dataset_loss(&model, &videos, 0.0).expect("loss");
    let unregularized = dataset_loss(&plain, &videos, 1.0).expect("loss");
    let exact = regularized.to_bits() == unregularized.to_bits();
    check(
        8,
        "regularization math",
        zero.abs() <= 1e-15 && (half - 0.5).abs() <= 1e-15 && exact,
        format!("KL(0,1) {zero:e}, KL(1,1) {half}, delta=0 bit-exact: {exact}"),
    )
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let d = dims(2, 12, 13);
        let (a, b) = (random_video(d, 2 * seed), random_video(d, 2 * seed + 1));
        let mask = build_mask(MaskKind::Sparse(0.3), d, seed).expect("mask");
        worst = worst
            .max(rel(psnr(&a, &b).unwrap(), ref_psnr(&a, &b)))
            .max(rel(ssim(&a, &b).unwrap(), ref_ssim(&a, &b)))
            .max(rel(error_e(&[(&a, &b)]).unwrap(), ref_mse(&a, &b).sqrt()))
            .max(rel(
                context_l1(&a, &b, &mask.indices).unwrap(),
                ref_context_l1(&a, &b, &mask.indices),
            ));
    }
    let gray = VideoTensor::filled(dims(2, 12, 12), [0.5; 3]);
    let shifted = VideoTensor::filled(dims(2, 12, 12), [0.5 + 16.0 / 255.0; 3]);
    let p = psnr(&gray, &shifted).unwrap();
    let e = error_e(&[(&shifted, &gray)]).unwrap();
    let analytic = (p - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() <= 1e-9 && (e - 16.0).abs() <= 1e-9;
    check(
        9,
        "metrics oracle equivalence",
        worst <= 1e-10 && analytic,
        format!("worst relative error {worst:.2e}; offset-16 PSNR {p:.6} dB, error {e:.9}"),
    )
}

fn small_train_bytes() -> Vec<u8> {
    let videos: Vec<VideoTensor> = bouncing_ball_videos(&BouncingBallSpec {
        count: 3,
        size: 16,
        frames: 4,
        seed: 1,
    })
    .into_iter()
    .map(|(_, v)| v)
    .collect();
    let config = TrainConfig {
        profile: ArchProfile::test(),
        regularization: Regularization::GaussianSemantic,
        lr: 1e-3,
        max_epochs: 2,
        final_epochs: Some(2),
        pixel_batch: 256,
        video_batch: 2,
        first_stage: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&videos, None, &config, &mut inrv::trainer::NoObserver).expect("train");
    let info = CheckpointInfo {
        dims: Some(videos[0].dims()),
        stage: out.stages.len(),
        config_hash: inrv::dataio::config_hash(&format!("{config:?}")),
    };
    encode_checkpoint(&out.model, &info)
}

fn criterion_10(model: &InrvModel) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("v.rvid");
    let video = random_video(dims(2, 4, 4), 9);
    write_rvid(&path, &video).expect("write");
    let bytes = std::fs::read(&path).expect("read bytes");
    let back = read_rvid(&path).expect("read");
    let rvid_ok = encode_rvid(&back) == bytes && decode_rvid(&bytes).expect("decode") == back;

    let info = CheckpointInfo {
        dims: Some(dims(FRAMES, SIZE, SIZE)),
        stage: 3,
        config_hash: inrv::dataio::config_hash(&format!("{:?}", hypernet_config())),
    };
    let first = encode_checkpoint(model, &info);
    let (decoded, decoded_info) = decode_checkpoint(&first).expect("decode checkpoint");
    let inrv_ok = encode_checkpoint(&decoded, &decoded_info) == first && decoded == *model;
    drop(first);

    let runs_ok = small_train_bytes() == small_train_bytes();
    check(
        10,
        "persistence",
        rvid_ok && inrv_ok && runs_ok,
        format!("rvid round-trip {rvid_ok}, checkpoint round-trip {inrv_ok}, repeated training identical {runs_ok}"),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; listing must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let data = dataset();
    let params: Vec<BallParams> = data.iter().map(|(p, _)| *p).collect();
    assert_eq!(params, bouncing_ball_params(&BouncingBallSpec {
        count: VIDEOS,
        size: SIZE,
        frames: FRAMES,
        seed: 0,
    }));

    let mut outcomes = vec![criterion_1(), criterion_2(&data[0].1)];
    let single: Vec<f64> = PROBES.iter().map(|&n| single_psnr(&data[n].1)).collect();
    outcomes.push(criterion_3(single[0]));
    let trained = criterion_4(&data, &single);
    outcomes.push(trained.outcome);
    outcomes.push(criterion_5(&trained.model));
    outcomes.push(criterion_6(&trained.model));
    outcomes.push(criterion_7(&trained.model, &params));
    outcomes.push(criterion_8());
    outcomes.push(criterion_9());
    outcomes.push(criterion_10(&trained.model));

    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
