//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is always printed. Pass criterion
//! numbers as arguments to run a subset:
//! `cargo test -p me-rppg --test acceptance -- 5 9`.

use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use me_rppg::bench::{self, alloc::TrackingAllocator};
use me_rppg::data::{synth_set, BvpSignal, Clip, SynthConfig};
use me_rppg::eval::{chunk_hr_pairs, InferMode};
use me_rppg::model::{flow_init, forward_chunk_values, forward_flow_step, init_model, param_count, ModelConfig, ModelParams};
use me_rppg::real::Real;
use me_rppg::signal::{estimate_hr, green_baseline, metrics, pearson, HrBand};
use me_rppg::ssd::{discretize_zoh, ssd_chunk, ssd_step, zoh_factors, ContinuousSsm, Schedule, SelectiveSeq, SsdState};
use me_rppg::tn::{fit_linear_trend, tn_chunk, tn_flow_init, DEFAULT_ALPHA, DEFAULT_EPS};
use me_rppg::train::{train_loop, TrainConfig};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- SSD

/// One random system: per-step (selective) or a single ZOH-discretized one.
struct Draw {
    n: usize,
    p: usize,
    q: usize,
    m: usize,
    t: usize,
    abar: Vec<f64>,
    bbar: Vec<f64>,
    c: Vec<f64>,
    x: Vec<f64>,
    lti: Option<ContinuousSsm<f64>>,
}

fn draw_abar(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => 1.0,
        1 => 1.0 - 1e-3 * rng.random::<f64>(),
        // (0, 1]
        _ => 1.0 - rng.random::<f64>(),
    }
}

fn random_draw(rng: &mut ChaCha8Rng, max_len: bool) -> Draw {
    let (n, p, q) = if max_len {
        (32, 8, 8)
    } else {
        (rng.random_range(1..=32), rng.random_range(1..=8), rng.random_range(1..=8))
    };
    let m = rng.random_range(1..=2);
    // Log-uniform length so short and long sequences are both common.
    let t = if max_len { 1800 } else { (1800f64.ln() * rng.random::<f64>()).exp().round().clamp(1.0, 1800.0) as usize };
    let u = |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let x = u(rng, t * p * m);
    if !max_len && rng.random_range(0..4) == 0 {
        let b = u(rng, n * p);
        let c = u(rng, q * n);
        let a_diag: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -(i as f64) * 0.3 }).collect();
        let sys = ContinuousSsm::new(a_diag, b, c, p, q, 0.05).unwrap();
        return Draw { n, p, q, m, t, abar: vec![], bbar: vec![], c: vec![], x, lti: Some(sys) };
    }
    let bbar = u(rng, t * n * p);
    let c = u(rng, t * q * n);
    let abar = (0..t * n).map(|_| draw_abar(rng)).collect();
    Draw { n, p, q, m, t, abar, bbar, c, x, lti: None }
}

fn rel_err<F: Real>(a: &[F], b: &[F]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.f64().abs()).fold(0.0, f64::max).max(1e-30);
    diff / scale
}

/// Step-by-step reference: outputs and final state.
fn fold_steps<F: Real, S: Schedule<F>>(s: &S, x: &[F], t: usize, n: usize, p: usize, q: usize, m: usize) -> (Vec<F>, Vec<F>) {
    let mut st = SsdState::zeros(n, m);
    let mut y = vec![F::zero(); t * q * m];
    for k in 0..t {
        ssd_step(s, k, &mut st, &x[k * p * m..(k + 1) * p * m], &mut y[k * q * m..(k + 1) * q * m]).unwrap();
    }
    (y, st.h().to_vec())
}

/// Chunk vs folded step, outputs and final state, relative error.
fn duality<F: Real, S: Schedule<F>>(s: &S, d: &Draw) -> f64 {
    let x: Vec<F> = d.x.iter().map(|&v| F::of(v)).collect();
    let (y_ref, h_ref) = fold_steps(s, &x, d.t, d.n, d.p, d.q, d.m);
    let mut st = SsdState::zeros(d.n, d.m);
    let y = ssd_chunk(s, &x, d.t, &mut st).unwrap();
    rel_err(&y, &y_ref).max(rel_err(st.h(), &h_ref))
}

fn selective<F: Real>(d: &Draw) -> SelectiveSeq<F> {
    let cast = |v: &[f64]| v.iter().map(|&x| F::of(x)).collect::<Vec<F>>();
    SelectiveSeq::new(d.n, d.p, d.q, cast(&d.abar), cast(&d.bbar), cast(&d.c)).unwrap()
}

fn draw_errors(d: &Draw) -> (f64, f64) {
    match &d.lti {
        Some(sys) => {
            let s64 = discretize_zoh(sys).unwrap();
            let sys32 = ContinuousSsm::new(
                sys.a_diag.iter().map(|&v| v as f32).collect(),
                sys.b.iter().map(|&v| v as f32).collect(),
                sys.c.iter().map(|&v| v as f32).collect(),
                sys.p,
                sys.q,
                sys.dt as f32,
            )
            .unwrap();
            let s32 = discretize_zoh(&sys32).unwrap();
            (duality::<f64, _>(&s64, d), duality::<f32, _>(&s32, d))
        }
        None => (duality::<f64, _>(&selective::<f64>(d), d), duality::<f32, _>(&selective::<f32>(d), d)),
    }
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let draws = 1000;
    let errs: Vec<(f64, f64)> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            draw_errors(&random_draw(&mut rng, i < 4))
        })
        .collect();
    let elapsed = started.elapsed();
    let e64 = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let e32 = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    verdict(
        e64 <= 1e-10 && e32 <= 1e-5 && elapsed < Duration::from_secs(60),
        format!("{draws} draws, max rel err f64 {e64:.2e} (<= 1e-10), f32 {e32:.2e} (<= 1e-5), {:.1}s (< 60s)", elapsed.as_secs_f64()),
    )
}

fn split_points(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..k - 1).map(|_| rng.random_range(1..t)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut pts = vec![0];
    pts.extend(cuts);
    pts.push(t);
    pts
}

fn transfer_err<F: Real>(d: &Draw, pts: &[usize]) -> f64 {
    let seq = selective::<F>(d);
    let x: Vec<F> = d.x.iter().map(|&v| F::of(v)).collect();
    let (pm, qm) = (d.p * d.m, d.q * d.m);
    let mut whole_state = SsdState::zeros(d.n, d.m);
    let whole = ssd_chunk(&seq, &x, d.t, &mut whole_state).unwrap();
    let mut st = SsdState::zeros(d.n, d.m);
    let mut pieces = Vec::with_capacity(whole.len());
    for w in pts.windows(2) {
        let (a, len) = (w[0], w[1] - w[0]);
        let seg = seq.segment(a, len).unwrap();
        pieces.extend(ssd_chunk(&seg, &x[a * pm..(a + len) * pm], len, &mut st).unwrap());
    }
    debug_assert_eq!(pieces.len(), d.t * qm);
    rel_err(&pieces, &whole).max(rel_err(st.h(), whole_state.h()))
}

fn criterion_2() -> Verdict {
    let per_k = 200;
    let errs: Vec<(f64, f64)> = (0..3 * per_k)
        .into_par_iter()
        .map(|i| {
            let k = [2, 4, 8][i % 3];
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
            let mut d = random_draw(&mut rng, i < 3);
            while d.lti.is_some() || d.t < 2 * k {
                d = random_draw(&mut rng, false);
            }
            let pts = split_points(&mut rng, d.t, k);
            (transfer_err::<f64>(&d, &pts), transfer_err::<f32>(&d, &pts))
        })
        .collect();
    let e64 = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let e32 = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    verdict(
        e64 <= 1e-10 && e32 <= 1e-5,
        format!("{} splits (k = 2, 4, 8), max rel err f64 {e64:.2e}, f32 {e32:.2e}", errs.len()),
    )
}

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    for dt in [1e-3, 0.05, 1.0, 7.5] {
        let (abar, phi) = zoh_factors(0.0f64, dt);
        worst = worst.max((abar - 1.0).abs()).max((phi - dt).abs());
        // Just off the limit the factors follow their Taylor series.
        let a = -1e-13f64;
        let x = a * dt;
        let (ab, ph) = zoh_factors(a, dt);
        worst = worst.max((ab - (1.0 + x)).abs()).max((ph - dt * (1.0 + x / 2.0)).abs());
    }
    let (abar, phi) = zoh_factors(-1.0f64, LN_2);
    worst = worst.max((abar - 0.5).abs()).max((phi - 0.5).abs());
    let sys = ContinuousSsm::new(vec![-1.0, 0.0], vec![2.0, 3.0], vec![1.0, 1.0], 1, 1, LN_2).unwrap();
    let d = discretize_zoh(&sys).unwrap();
    let expect_abar = [0.5, 1.0];
    let expect_bbar = [1.0, 3.0 * LN_2];
    for i in 0..2 {
        worst = worst.max((d.abar[i] - expect_abar[i]).abs()).max((d.bbar[i] - expect_bbar[i]).abs());
    }
    verdict(worst <= 1e-12, format!("max abs err {worst:.2e} (<= 1e-12) over a = 0 limit and a = -1, dt = ln 2"))
}

// ---------------------------------------------------------------- TN

fn random_series(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(0.0..3.0));
    let offset = rng.random_range(-1e3..1e3);
    let slope = rng.random_range(-5.0..5.0);
    match rng.random_range(0..3) {
        0 => (0..t).map(|i| offset + slope * i as f64 + scale * rng.random_range(-1.0..1.0)).collect(),
        1 => {
            let f = rng.random_range(0.01..0.45);
            let ph = rng.random_range(0.0..2.0 * PI);
            (0..t).map(|i| offset + slope * i as f64 + scale * (2.0 * PI * f * i as f64 + ph).sin()).collect()
        }
        _ => {
            let mut acc = offset;
            (0..t)
                .map(|_| {
                    acc += scale * rng.random_range(-1.0..1.0);
                    acc
                })
                .collect()
        }
    }
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_mean, mut worst_std, mut tested, mut degenerate): (f64, f64, usize, usize) = (0.0, 0.0, 0, 0);
    while tested < 1000 {
        let t = rng.random_range(3..=2000);
        let x = random_series(&mut rng, t);
        // Non-degenerate: residual RMS at least 1e6·eps, so eps cannot shift
        // the output scale by more than the tolerance.
        let fit = fit_linear_trend(&x).unwrap();
        let rms = (x.iter().enumerate().map(|(i, v)| (v - fit.at(i + 1)).powi(2)).sum::<f64>() / t as f64).sqrt();
        if rms < 1e6 * DEFAULT_EPS {
            degenerate += 1;
            continue;
        }
        let y = tn_chunk(&x, t, 1, DEFAULT_EPS).unwrap();
        let mean = y.iter().sum::<f64>() / t as f64;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
        tested += 1;
    }
    let mut linear_ok = true;
    for k in 0..100 {
        let t = 2 + k * 17;
        let (a, b) = (rng.random_range(-10.0..10.0), rng.random_range(-1e3..1e3));
        let x: Vec<f64> = (1..=t).map(|i| a * i as f64 + b).collect();
        linear_ok &= tn_chunk(&x, t, 1, DEFAULT_EPS).unwrap().iter().all(|&v| v == 0.0);
    }
    verdict(
        worst_mean <= 1e-6 && worst_std <= 1e-6 && linear_ok,
        format!("{tested} series ({degenerate} degenerate draws skipped): max |mean| {worst_mean:.2e}, max |std - 1| {worst_std:.2e}; exactly linear -> all zero: {linear_ok}"),
    )
}

fn criterion_5() -> Verdict {
    let fps = 30.0;
    let t = (60.0 * fps) as usize;
    let warm = (3.0 * fps) as usize;
    let mut worst = (1.0, 0.0, 0.0);
    let mut count = 0;
    let mut bpm = 30.0;
    while bpm <= 180.0 {
        for slope in [0.0, 0.002, 0.01] {
            for phase in [0.0, 1.3, 2.9] {
                let x: Vec<f64> = (1..=t)
                    .map(|i| (2.0 * PI * bpm / 60.0 * i as f64 / fps + phase).sin() + slope * i as f64)
                    .collect();
                let chunk = tn_chunk(&x, t, 1, DEFAULT_EPS).unwrap();
                let mut st = tn_flow_init(DEFAULT_ALPHA, DEFAULT_EPS, &x[..1]).unwrap();
                let mut flow = vec![0.0; t];
                for (i, v) in x.iter().enumerate() {
                    st.step(std::slice::from_ref(v), &mut flow[i..i + 1]);
                }
                let r = pearson(&chunk[warm..], &flow[warm..]).unwrap();
                if r < worst.0 {
                    worst = (r, bpm, slope);
                }
                count += 1;
            }
        }
        bpm += 5.0;
    }
    verdict(
        worst.0 >= 0.95,
        format!(
            "{count} 60 s streams, 30-180 BPM, drift <= 0.01/frame, alpha {DEFAULT_ALPHA}: min r {:.4} (>= 0.95) at {} BPM, drift {}",
            worst.0, worst.1, worst.2
        ),
    )
}

// ---------------------------------------------------------------- model

/// Mid-sized model used where the default encoder would dominate runtime
/// without exercising anything temporal.
fn mid_config() -> ModelConfig {
    ModelConfig {
        input_h: 16,
        input_w: 16,
        encoder_channels: vec![16, 32],
        feature_dim: 64,
        state_dim: 16,
        ..ModelConfig::default()
    }
}

fn synth_frames(cfg: &ModelConfig, secs: f64, hr: f64, seed: u64) -> Clip {
    me_rppg::data::synth_clip(&SynthConfig {
        hr_bpm: hr,
        duration_s: secs,
        resolution: (cfg.input_h, cfg.input_w),
        noise_sigma: 0.01,
        trend_slope: 1e-4,
        jitter_px: 1,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Frames whose per-channel brightness jumps at random every frame, plus
/// pixel noise, so every encoder feature varies strongly over time.
fn flicker_frames(cfg: &ModelConfig, t: usize, seed: u64) -> me_rppg::data::FrameTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (cfg.input_h, cfg.input_w, cfg.in_channels);
    let mut data = Vec::with_capacity(t * h * w * c);
    for _ in 0..t {
        let level: Vec<f32> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        for _ in 0..h * w {
            for l in &level {
                data.push(l + rng.random_range(-0.05..0.05));
            }
        }
    }
    me_rppg::data::FrameTensor::new([t, h, w, c], 30.0, data).unwrap()
}

fn stream<F: Real>(params: &ModelParams<F>, clip: &Clip) -> Vec<F> {
    let mut st = flow_init(params).unwrap();
    (0..clip.len()).map(|t| forward_flow_step(params, &mut st, clip.frames.frame(t)).unwrap()).collect()
}

fn criterion_6() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for selective in [true, false] {
        let cfg = ModelConfig { tn_identity: true, selective, ..mid_config() };
        let mut params: ModelParams<f32> = init_model(&cfg).unwrap();
        // Flickering frames keep every feature moving, and the head is rescaled
        // so the output has unit spread; a fixed tolerance then means something.
        let frames = flicker_frames(&cfg, 1800, 6);
        let raw = forward_chunk_values(&params, &frames).unwrap();
        let m0 = raw.iter().sum::<f32>() / raw.len() as f32;
        let s0 = (raw.iter().map(|v| (v - m0).powi(2)).sum::<f32>() / raw.len() as f32).sqrt();
        params.head.weight.data.iter_mut().for_each(|w| *w /= s0);
        params.head.bias.data[0] = (params.head.bias.data[0] - m0) / s0;
        let chunk = forward_chunk_values(&params, &frames).unwrap();
        let mut st = flow_init(&params).unwrap();
        let flow: Vec<f32> = (0..1800).map(|t| forward_flow_step(&params, &mut st, frames.frame(t)).unwrap()).collect();
        let err = chunk.iter().zip(&flow).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        let mean = chunk.iter().sum::<f32>() / 1800.0;
        let spread = (chunk.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 1800.0).sqrt();
        pass &= err <= 1e-4 && chunk.len() == 1800;
        pass &= spread > 0.5;
        lines.push(format!(
            "{}: max abs diff {err:.2e} (output mean {mean:.3}, std {spread:.3})",
            if selective { "selective" } else { "lti" }
        ));
    }
    // With normalization active the two modes differ only through the trend estimate.
    let cfg = mid_config();
    let params: ModelParams<f32> = init_model(&cfg).unwrap();
    let clip = synth_frames(&cfg, 20.0, 75.0, 7);
    let chunk: Vec<f64> = forward_chunk_values(&params, &clip.frames).unwrap().iter().map(|v| v.f64()).collect();
    let flow: Vec<f64> = stream(&params, &clip).iter().map(|v| v.f64()).collect();
    let r = pearson(&chunk[90..], &flow[90..]).unwrap_or(f64::NAN);
    lines.push(format!("info: TN active, r after 3 s = {r:.3}"));
    verdict(pass, format!("T = 1800, f32, TN identity; {}", lines.join("; ")))
}

fn criterion_7() -> Verdict {
    let started = Instant::now();
    let mut worst = (0.0, String::new());
    let mut groups = 0;
    for (selective, tn_identity) in [(true, false), (false, false), (true, true)] {
        let cfg = ModelConfig {
            input_h: 8,
            input_w: 8,
            encoder_channels: vec![4, 8],
            n_blocks: 2,
            feature_dim: 8,
            state_dim: 4,
            selective,
            tn_identity,
            seed: 3,
            ..ModelConfig::default()
        };
        let params: ModelParams<f64> = init_model(&cfg).unwrap();
        let frames = flicker_frames(&cfg, 24, 8);
        let target = me_rppg::data::synth_clip(&SynthConfig { resolution: (4, 4), duration_s: 0.8, ..SynthConfig::default() })
            .unwrap()
            .bvp
            .standardized()
            .into_samples();
        for g in me_rppg::train::gradient_check(&params, &frames, &target, 1e-5).unwrap() {
            groups += 1;
            if g.rel_err > worst.0 || worst.1.is_empty() {
                worst = (g.rel_err, g.name.clone());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst.0 <= 1e-3 && secs < 300.0,
        format!("{groups} parameter groups over 3 model variants: max rel err {:.2e} ({}) (<= 1e-3), {secs:.1}s (< 300s)", worst.0, worst.1),
    )
}

fn desk_clips(count: usize, noise: f64, seed: u64) -> Vec<Clip> {
    let base = SynthConfig { resolution: (8, 8), duration_s: 10.0, noise_sigma: noise, ..SynthConfig::default() };
    synth_set(&base, count, (40.0, 160.0), seed).unwrap().into_iter().map(|(_, c)| c).collect()
}

fn green_mae(clips: &[Clip]) -> f64 {
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for c in clips {
        let g = green_baseline(&c.frames).unwrap();
        p.push(estimate_hr(&g, HrBand::default()).unwrap().bpm);
        t.push(estimate_hr(&c.bvp, HrBand::default()).unwrap().bpm);
    }
    metrics(&p, &t).unwrap().mae
}

fn criterion_8() -> Verdict {
    let started = Instant::now();
    let mut train = desk_clips(32, 0.0, 80);
    train.extend(desk_clips(32, 0.02, 81));
    let clean = desk_clips(16, 0.0, 90);
    let noisy = desk_clips(16, 0.02, 91);
    let cfg = TrainConfig {
        epochs: 20,
        chunk_len: 150,
        batch_size: 8,
        seed: 8,
        threads: std::thread::available_parallelism().map(|n| n.get().min(8)).unwrap_or(1),
        ..TrainConfig::default()
    };
    let init: ModelParams<f64> = init_model(&ModelConfig::desk()).unwrap();
    let out = train_loop(init, &train, &cfg, None).unwrap();
    let params: ModelParams<f32> = out.params.cast();
    let mae = |clips: &[Clip]| {
        let (p, t) = chunk_hr_pairs(&params, clips, 300, InferMode::Chunk).unwrap();
        metrics(&p, &t).unwrap().mae
    };
    let (m_clean, m_noisy) = (mae(&clean), mae(&noisy));
    let losses = out.log.epoch_losses();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        m_clean <= 3.0 && m_noisy <= 10.0 && secs <= 1800.0,
        format!(
            "{} epochs, loss {:.3} -> {:.3}; held-out MAE clean {m_clean:.2} (<= 3), noisy {m_noisy:.2} (<= 10); green baseline clean {:.2}, noisy {:.2}; {secs:.0}s (<= 1800s)",
            losses.len(),
            losses.first().map_or(f64::NAN, |l| l.1),
            losses.last().map_or(f64::NAN, |l| l.1),
            green_mae(&clean),
            green_mae(&noisy),
        ),
    )
}

// ---------------------------------------------------------------- efficiency

fn criterion_9() -> Verdict {
    let params: ModelParams<f32> = init_model(&ModelConfig::desk()).unwrap();
    let pool = bench::bench_frames(&params.config, 64, 1).unwrap();
    let mut st = flow_init(&params).unwrap();
    let mut at_100 = 0;
    let frames = 100_000;
    let mut lat = Vec::with_capacity(frames);
    let (res, step_bytes) = bench::alloc::measure_peak(|| {
        for t in 0..frames {
            let started = Instant::now();
            std::hint::black_box(forward_flow_step(&params, &mut st, pool.frame(t % 64)).unwrap());
            lat.push(started.elapsed().as_secs_f64() * 1e3);
            if t + 1 == 100 {
                at_100 = st.state_bytes();
            }
        }
        st.state_bytes()
    });
    let at_100k = res;
    let state_ok = at_100 == at_100k && step_bytes == 0;
    let slope = bench::latency_slope_test(&lat, 100, 0.1).unwrap();

    let chunk_lens = [200, 400, 600, 800, 1000, 1200, 1400, 1600, 1800];
    let curve = bench::bench_chunk_memory(&params, &chunk_lens).unwrap();
    verdict(
        state_ok && slope.flat && curve.r2 >= 0.99,
        format!(
            "state bytes {at_100} at 1e2 and {at_100k} at 1e5 frames, {step_bytes} bytes allocated by steps; over those 1e5 frames latency slope {:.2e} ms/frame, 99% CI [{:.2e}, {:.2e}] within +-10% of median {:.3} ms over the stream: {}; chunk peak memory {:.0} B/frame + {:.0} B, R2 {:.5} (>= 0.99)",
            slope.slope, slope.ci99.0, slope.ci99.1, slope.median_ms, slope.flat, curve.slope, curve.intercept, curve.r2
        ),
    )
}

fn criterion_10() -> Verdict {
    let params: ModelParams<f32> = init_model(&ModelConfig::default()).unwrap();
    let r = bench::bench_flow(&params, 300).unwrap();
    verdict(
        r.median_ms < 33.3,
        format!("default config flow median {:.3} ms/frame (< 33.3), p99 {:.3} ms", r.median_ms, r.p99_ms),
    )
}

fn criterion_11() -> Verdict {
    let params: ModelParams<f32> = init_model(&ModelConfig::default()).unwrap();
    let n = param_count(&params);
    verdict(n <= 1_000_000, format!("default config has {n} parameters (<= 1e6; reference model 580K)"))
}

fn tone(bpm: f64, harmonic: f64, secs: f64) -> BvpSignal {
    let fps = 30.0;
    let f = bpm / 60.0;
    let s = (0..(secs * fps) as usize)
        .map(|i| {
            let t = i as f64 / fps;
            (2.0 * PI * f * t).sin() + harmonic * (4.0 * PI * f * t + 0.4).sin()
        })
        .collect();
    BvpSignal::new(s, fps).unwrap()
}

fn criterion_12() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut bpm = 40.0;
    while bpm <= 170.0 {
        let est = estimate_hr(&tone(bpm, 0.0, 30.0), HrBand::default()).unwrap();
        worst = worst.max((est.bpm - bpm).abs());
        n += 1;
        bpm += 0.37;
    }
    let mut harmonic_ok = true;
    for hr in [45.0, 60.0, 72.0, 84.0] {
        let est = estimate_hr(&tone(hr, 1.1, 30.0), HrBand::default()).unwrap();
        harmonic_ok &= (est.bpm - hr).abs() <= 0.5;
    }
    verdict(
        worst <= 0.5 && harmonic_ok,
        format!("{n} tones 40-170 BPM: max error {worst:.3} BPM (<= 0.5); strong second harmonic resolves to fundamental: {harmonic_ok}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 12] = [
        (1, "SSD chunk/step duality", criterion_1),
        (2, "SSD state transfer", criterion_2),
        (3, "ZOH closed forms", criterion_3),
        (4, "TN chunk statistics", criterion_4),
        (5, "TN flow vs chunk", criterion_5),
        (6, "full-model chunk/flow duality", criterion_6),
        (7, "gradient correctness", criterion_7),
        (8, "desk-scale training", criterion_8),
        (9, "constant-memory flow inference", criterion_9),
        (10, "flow latency", criterion_10),
        (11, "parameter budget", criterion_11),
        (12, "HR estimator", criterion_12),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {id:>2} {} {name} [{:.1}s]: {}",
            if v.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
