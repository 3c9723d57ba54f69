//! Latency, memory and cost measurements for both inference modes.

pub mod alloc;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::FrameTensor;
use crate::error::{Error, Result};
use crate::model::{flow_init, forward_chunk_values, forward_flow_step, param_count, ModelConfig, ModelParams};
use crate::real::Real;

pub const WARMUP_FRAMES: usize = 100;

/// Distinct frames cycled through during a stream benchmark.
const STREAM_POOL: usize = 64;

/// Uniform random frames matching the model's input.
pub fn bench_frames(cfg: &ModelConfig, t: usize, seed: u64) -> Result<FrameTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t * cfg.input_h * cfg.input_w * cfg.in_channels;
    let data = (0..n).map(|_| rng.random_range(0.0..1.0f32)).collect();
    FrameTensor::new([t, cfg.input_h, cfg.input_w, cfg.in_channels], 30.0, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub frames: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub param_count: usize,
    pub weight_bytes: usize,
    pub state_bytes: usize,
    /// Carried state size right after the warm-up.
    pub state_bytes_start: usize,
    pub buffer_bytes: usize,
    /// Peak bytes allocated by the measured steps (0 when steps never allocate).
    pub step_alloc_bytes: usize,
    pub gflops: f64,
    /// Per-frame latencies in stream order.
    pub latencies_ms: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Streams `stream_len` frames through flow mode after [`WARMUP_FRAMES`]
/// unmeasured ones, timing each step.
pub fn bench_flow<F: Real>(params: &ModelParams<F>, stream_len: usize) -> Result<LatencyReport> {
    if stream_len == 0 {
        return Err(Error::invalid("stream length must be >= 1"));
    }
    let frames = bench_frames(&params.config, STREAM_POOL, 7)?;
    let mut state = flow_init(params)?;
    for t in 0..WARMUP_FRAMES {
        std::hint::black_box(forward_flow_step(params, &mut state, frames.frame(t % STREAM_POOL))?);
    }
    let state_bytes_start = state.state_bytes();
    let mut lat = Vec::with_capacity(stream_len);
    let (res, step_alloc_bytes) = alloc::measure_peak(|| -> Result<()> {
        for t in 0..stream_len {
            let frame = frames.frame(t % STREAM_POOL);
            let started = Instant::now();
            let y = forward_flow_step(params, &mut state, frame)?;
            lat.push(started.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(y);
        }
        Ok(())
    });
    res?;
    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        frames: stream_len,
        median_ms: median(&lat),
        p99_ms: quantile(&sorted, 0.99),
        mean_ms: lat.iter().sum::<f64>() / lat.len() as f64,
        param_count: param_count(params),
        weight_bytes: params.weight_bytes(),
        state_bytes: state.state_bytes(),
        state_bytes_start,
        buffer_bytes: state.scratch_bytes(),
        step_alloc_bytes,
        gflops: flops_estimate(&params.config).total() as f64 / 1e9,
        latencies_ms: lat,
    })
}

/// Runs chunk mode over `t` frames `reps` times. Latency is the median
/// whole-chunk time divided by `t`; buffers are the peak bytes allocated
/// during one run (0 without the tracking allocator).
pub fn bench_chunk<F: Real>(params: &ModelParams<F>, t: usize, reps: usize) -> Result<LatencyReport> {
    if t < 2 || reps == 0 {
        return Err(Error::invalid("chunk benchmark needs t >= 2 and reps >= 1"));
    }
    let frames = bench_frames(&params.config, t, 7)?;
    let mut per_frame = Vec::with_capacity(reps);
    let mut peak = 0;
    for _ in 0..reps {
        let started = Instant::now();
        let (out, bytes) = alloc::measure_peak(|| forward_chunk_values(params, &frames));
        std::hint::black_box(out?);
        per_frame.push(started.elapsed().as_secs_f64() * 1e3 / t as f64);
        peak = peak.max(bytes);
    }
    let mut sorted = per_frame.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        frames: t,
        median_ms: median(&per_frame),
        p99_ms: quantile(&sorted, 0.99),
        mean_ms: per_frame.iter().sum::<f64>() / reps as f64,
        param_count: param_count(params),
        weight_bytes: params.weight_bytes(),
        state_bytes: 0,
        state_bytes_start: 0,
        buffer_bytes: peak,
        step_alloc_bytes: peak,
        gflops: flops_estimate(&params.config).total() as f64 / 1e9,
        latencies_ms: per_frame,
    })
}

/// Trend test on per-frame latency.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeTest {
    pub blocks: usize,
    /// Milliseconds per frame.
    pub slope: f64,
    /// 99% confidence interval of the slope.
    pub ci99: (f64, f64),
    pub median_ms: f64,
    /// Drift bound over the stream, as a fraction of the median.
    pub margin: f64,
    /// The whole interval implies less than `margin·median` drift across
    /// the stream.
    pub flat: bool,
}

/// Regresses block medians of `latencies` against frame index and checks
/// that the 99% interval of the implied end-to-end drift lies within
/// `±margin·median` (an equivalence test, so noise alone cannot pass it).
pub fn latency_slope_test(latencies: &[f64], blocks: usize, margin: f64) -> Result<SlopeTest> {
    if blocks < 3 || latencies.len() < blocks {
        return Err(Error::invalid("slope test needs at least 3 blocks with one frame each"));
    }
    let size = latencies.len() / blocks;
    let pts: Vec<(f64, f64)> = (0..blocks)
        .map(|b| {
            let seg = &latencies[b * size..(b + 1) * size];
            ((b * size) as f64 + size as f64 / 2.0, median(seg))
        })
        .collect();
    let (slope, intercept, _) = affine_fit(&pts);
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sse: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::numerical(format!("t distribution: {e}")))?
        .inverse_cdf(0.995);
    let ci99 = (slope - t * se, slope + t * se);
    let med = median(latencies);
    let span = (blocks * size) as f64;
    let bound = margin * med;
    let flat = ci99.0 * span > -bound && ci99.1 * span < bound;
    Ok(SlopeTest { blocks, slope, ci99, median_ms: med, margin, flat })
}

/// Least-squares `y = slope·x + intercept` and its `R²`.
pub fn affine_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ym - slope * xm;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Peak transient bytes as a function of sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCurve {
    /// `(T, peak bytes)`
    pub points: Vec<(usize, usize)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl MemoryCurve {
    fn from_points(points: Vec<(usize, usize)>) -> Self {
        let pts: Vec<(f64, f64)> = points.iter().map(|&(t, b)| (t as f64, b as f64)).collect();
        let (slope, intercept, r2) = affine_fit(&pts);
        Self { points, slope, intercept, r2 }
    }

    /// Peak at the longest length over peak at the shortest.
    pub fn ratio(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) if a.1 > 0 => b.1 as f64 / a.1 as f64,
            _ => f64::NAN,
        }
    }
}

fn require_tracking() -> Result<()> {
    if alloc::is_installed() {
        Ok(())
    } else {
        Err(Error::invalid("memory benchmarks need the tracking allocator installed as the global allocator"))
    }
}

/// Peak bytes allocated while running chunk mode over `T` frames, for each
/// `T` in `lens`. Input frames are created before measuring.
pub fn bench_chunk_memory<F: Real>(params: &ModelParams<F>, lens: &[usize]) -> Result<MemoryCurve> {
    require_tracking()?;
    let mut points = Vec::with_capacity(lens.len());
    for &t in lens {
        let frames = bench_frames(&params.config, t, 11)?;
        let (out, peak) = alloc::measure_peak(|| forward_chunk_values(params, &frames).map(|v| v.len()));
        out?;
        points.push((t, peak));
    }
    Ok(MemoryCurve::from_points(points))
}

/// Peak bytes allocated while streaming `T` frames through flow mode
/// (state creation included), for each `T` in `lens`.
pub fn bench_flow_memory<F: Real>(params: &ModelParams<F>, lens: &[usize]) -> Result<MemoryCurve> {
    require_tracking()?;
    let frames = bench_frames(&params.config, STREAM_POOL, 13)?;
    let mut points = Vec::with_capacity(lens.len());
    for &t in lens {
        let (out, peak) = alloc::measure_peak(|| -> Result<()> {
            let mut state = flow_init(params)?;
            for i in 0..t {
                std::hint::black_box(forward_flow_step(params, &mut state, frames.frame(i % STREAM_POOL))?);
            }
            Ok(())
        });
        out?;
        points.push((t, peak));
    }
    Ok(MemoryCurve::from_points(points))
}

/// Analytic per-frame multiply-accumulate counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsBreakdown {
    /// 3×3 convolutions plus the projection to `D`.
    pub encoder: u64,
    /// `W_x` and `W_o`: `2·D²` per block.
    pub mixing: u64,
    /// Selective projections (`D + 2·N·D`) and the state update and
    /// readout (`3·N·D`) per block.
    pub ssd: u64,
    pub head: u64,
}

impl FlopsBreakdown {
    pub fn macs(&self) -> u64 {
        self.encoder + self.mixing + self.ssd + self.head
    }

    /// Floating-point operations, two per multiply-accumulate.
    pub fn total(&self) -> u64 {
        2 * self.macs()
    }
}

/// Per-frame cost in flow mode.
///
/// ```text
/// encoder = Σ_s H_s·W_s·9·C_in,s·C_out,s + C_last·D
/// mixing  = n_blocks · 2·D²
/// ssd     = n_blocks · (sel·(D + 2·N·D) + 3·N·D)
/// head    = D
/// ```
pub fn flops_estimate(cfg: &ModelConfig) -> FlopsBreakdown {
    let (mut h, mut w, mut cin) = (cfg.input_h as u64, cfg.input_w as u64, cfg.in_channels as u64);
    let mut encoder = 0;
    for &cout in &cfg.encoder_channels {
        encoder += h * w * 9 * cin * cout as u64;
        h /= 2;
        w /= 2;
        cin = cout as u64;
    }
    let d = cfg.feature_dim as u64;
    let n = cfg.state_dim as u64;
    let b = cfg.n_blocks as u64;
    encoder += cin * d;
    let sel = if cfg.selective { d + 2 * n * d } else { 0 };
    FlopsBreakdown { encoder, mixing: b * 2 * d * d, ssd: b * (sel + 3 * n * d), head: d }
}

/// One row of the efficiency table.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub name: String,
    pub params: usize,
    pub weight_bytes: usize,
    pub state_bytes: usize,
    pub buffer_bytes: usize,
    pub latency_ms: f64,
    pub gflops: f64,
}

impl EfficiencyRow {
    pub fn from_report(name: &str, r: &LatencyReport) -> Self {
        Self {
            name: name.to_string(),
            params: r.param_count,
            weight_bytes: r.weight_bytes,
            state_bytes: r.state_bytes,
            buffer_bytes: r.buffer_bytes,
            latency_ms: r.median_ms,
            gflops: r.gflops,
        }
    }
}

pub const EFFICIENCY_CSV_HEADER: &str = "model,params,weight_bytes,state_bytes,buffer_bytes,latency_ms,gflops";

pub fn efficiency_csv(rows: &[EfficiencyRow]) -> String {
    let mut s = format!("{EFFICIENCY_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{:.4},{:.4}\n",
            r.name, r.params, r.weight_bytes, r.state_bytes, r.buffer_bytes, r.latency_ms, r.gflops
        ));
    }
    s
}

pub fn efficiency_table(rows: &[EfficiencyRow]) -> String {
    let mb = |b: usize| b as f64 / (1024.0 * 1024.0);
    let mut s = format!(
        "{:<12} {:>10} {:>12} {:>12} {:>12} {:>12} {:>9}\n",
        "Model", "Params(K)", "Weights(MB)", "State(KB)", "Buffers(KB)", "Latency(ms)", "FLOPs(G)"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:>10.1} {:>12.3} {:>12.2} {:>12.2} {:>12.3} {:>9.4}\n",
            r.name,
            r.params as f64 / 1e3,
            mb(r.weight_bytes),
            r.state_bytes as f64 / 1024.0,
            r.buffer_bytes as f64 / 1024.0,
            r.latency_ms,
            r.gflops
        ));
    }
    s
}
