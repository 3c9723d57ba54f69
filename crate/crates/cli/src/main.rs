use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use me_rppg::bench::{self, alloc::TrackingAllocator, EfficiencyRow};
use me_rppg::config::KeyValues;
use me_rppg::data::{read_dataset, read_tensor, synth_set, write_dataset, write_signal, SynthConfig, DEFAULT_FPS};
use me_rppg::eval::{eval_grid, infer, InferMode};
use me_rppg::model::{init_model, load_checkpoint, param_count, save_checkpoint, ModelConfig, ModelParams};
use me_rppg::signal::{estimate_hr, metrics_table, HrBand, MetricReport};
use me_rppg::train::{resume_from, train_loop, TrainConfig, TrainLog};
use me_rppg::{Error, Result};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const LOG_FILE: &str = "train_log.csv";

#[derive(Parser)]
#[command(name = "me-rppg", version, about = "Remote pulse estimation from face video with a state space model")]
struct Cli {
    /// Worker threads for training; 1 keeps runs reproducible across machines.
    #[arg(long, global = true, env = "ME_RPPG_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip set.
    Synth(SynthArgs),
    /// Train a model on a clip set.
    Train(TrainArgs),
    /// Predict the pulse signal of one video.
    Infer(InferArgs),
    /// Heart-rate metrics over a clip set, per test chunk length.
    Eval(EvalArgs),
    /// Latency, memory and size report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Heart-rate range in BPM, `lo,hi`.
    #[arg(long, default_value = "40,160", value_parser = parse_pair)]
    hr_range: (f64, f64),
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    /// Seconds per clip.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Gaussian pixel noise, fraction of pixel range.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Maximum frame shift in pixels.
    #[arg(long, default_value_t = 0)]
    jitter: usize,
    /// Frame size, `HxW`.
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    resolution: (usize, usize),
    #[arg(long, default_value_t = 0.01)]
    amplitude: f64,
    /// Global brightness drift per frame.
    #[arg(long, default_value_t = 0.0)]
    trend: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Flat `key=value` file with model and training options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint (model config is taken from it).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Chunk,
    Flow,
}

impl From<ModeArg> for InferMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Chunk => InferMode::Chunk,
            ModeArg::Flow => InferMode::Flow,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Chunk,
    Flow,
    Both,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame tensor file.
    #[arg(long)]
    video: PathBuf,
    #[arg(long, value_enum, default_value = "chunk")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    /// BVP CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "160,300,600,900,1800", value_delimiter = ',')]
    test_chunk_lens: Vec<usize>,
    #[arg(long, value_enum, default_value = "chunk")]
    mode: EvalMode,
    /// CSV report path; a text table is written next to it with a `.txt` extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to measure; without it a freshly initialized model is used.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Model config for the fresh model.
    #[arg(long, conflicts_with = "ckpt")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "flow")]
    mode: ModeArg,
    /// Measured frames (flow) or chunk length (chunk).
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    /// CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("not a size: {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invalid(_) => 2,
        Error::Shape(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn load_params(dir: &Path) -> Result<ModelParams<f32>> {
    Ok(load_checkpoint(dir)?.params.cast())
}

fn synth(a: SynthArgs) -> Result<()> {
    let base = SynthConfig {
        duration_s: a.duration,
        fps: a.fps,
        resolution: a.resolution,
        pulse_amplitude: a.amplitude,
        noise_sigma: a.noise,
        trend_slope: a.trend,
        jitter_px: a.jitter,
        ..SynthConfig::default()
    };
    let items = synth_set(&base, a.clips, a.hr_range, a.seed)?;
    write_dataset(&a.out, &items)?;
    println!("wrote {} clips to {}", items.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, threads: usize) -> Result<()> {
    let clips = read_dataset(&a.data)?;
    let kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    let mut cfg = TrainConfig::from_kv(&kv, &TrainConfig::default())?;
    cfg.threads = threads.max(1);
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.chunk_len {
        cfg.chunk_len = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }

    let mut log_text = String::new();
    let (init, progress) = match &a.resume {
        Some(dir) => {
            let ckpt = load_checkpoint(dir)?;
            let (params, progress) = resume_from(&ckpt, cfg.adam)?;
            if let Ok(prev) = fs::read_to_string(dir.join(LOG_FILE)) {
                log_text = prev;
            }
            (params, Some(progress))
        }
        None => {
            let first = &clips[0].frames;
            let base = ModelConfig {
                input_h: first.height(),
                input_w: first.width(),
                in_channels: first.channels(),
                seed: cfg.seed,
                ..ModelConfig::default()
            };
            (init_model(&ModelConfig::from_kv(&kv, &base)?)?, None)
        }
    };
    eprintln!("training {} parameters on {} clips", param_count(&init), clips.len());
    let outcome = train_loop(init, &clips, &cfg, progress)?;
    save_checkpoint(&a.out, &outcome.to_checkpoint(&cfg))?;

    if log_text.is_empty() {
        log_text = format!("{}\n", TrainLog::CSV_HEADER);
    }
    outcome.log.to_csv().lines().skip(1).for_each(|l| {
        log_text.push_str(l);
        log_text.push('\n');
    });
    fs::write(a.out.join(LOG_FILE), log_text)?;
    for (epoch, loss) in outcome.log.epoch_losses() {
        println!("epoch {epoch} loss {loss:.6}");
    }
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let params = load_params(&a.ckpt)?;
    let frames = read_tensor(&a.video)?.with_fps(a.fps)?;
    let mode = InferMode::from(a.mode);
    let bvp = infer(&params, &frames, mode)?;
    write_signal(&a.out, &bvp)?;
    let hr = estimate_hr(&bvp, HrBand::default())?;
    println!(
        "mode={mode} frames={} hr_bpm={:.2} peak_power_ratio={:.4} flagged={}",
        bvp.len(),
        hr.bpm,
        hr.peak_power_ratio,
        hr.flagged
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let params = load_params(&a.ckpt)?;
    let clips = read_dataset(&a.data)?;
    let longest = clips.iter().map(|c| c.len()).max().unwrap_or(0);
    let (lens, skipped): (Vec<usize>, Vec<usize>) = a.test_chunk_lens.iter().partition(|&&l| l <= longest);
    if !skipped.is_empty() {
        eprintln!("skipping chunk lengths {skipped:?}: longest clip has {longest} frames");
    }
    if lens.is_empty() {
        return Err(usage("no test chunk length fits the clips"));
    }
    let modes: &[InferMode] = match a.mode {
        EvalMode::Chunk => &[InferMode::Chunk],
        EvalMode::Flow => &[InferMode::Flow],
        EvalMode::Both => &[InferMode::Chunk, InferMode::Flow],
    };
    let mut rows: Vec<(InferMode, usize, MetricReport)> = Vec::new();
    for &mode in modes {
        for (len, m) in eval_grid(&params, &clips, &lens, mode)? {
            rows.push((mode, len, m));
        }
    }
    let mut csv = format!("mode,chunk_len,{}\n", MetricReport::CSV_HEADER);
    for (mode, len, m) in &rows {
        csv.push_str(&format!("{mode},{len},{}\n", m.csv_row()));
    }
    let table = metrics_table(&rows.iter().map(|(mode, len, m)| (format!("{mode}/{len}"), *m)).collect::<Vec<_>>());
    print!("{table}");
    if let Some(path) = &a.report {
        fs::write(path, csv)?;
        fs::write(path.with_extension("txt"), table)?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let params: ModelParams<f32> = match (&a.ckpt, &a.config) {
        (Some(dir), _) => load_params(dir)?,
        (None, Some(path)) => init_model(&ModelConfig::from_kv(&KeyValues::load(path)?, &ModelConfig::default())?)?,
        (None, None) => init_model(&ModelConfig::default())?,
    };
    let (name, report) = match a.mode {
        ModeArg::Flow => ("flow", bench::bench_flow(&params, a.frames)?),
        ModeArg::Chunk => ("chunk", bench::bench_chunk(&params, a.frames, 3)?),
    };
    let rows = [EfficiencyRow::from_report(name, &report)];
    print!("{}", bench::efficiency_table(&rows));
    println!("median {:.4} ms  p99 {:.4} ms  mean {:.4} ms per frame", report.median_ms, report.p99_ms, report.mean_ms);
    match a.mode {
        ModeArg::Flow => {
            println!("state bytes after warm-up {} / at end {}", report.state_bytes_start, report.state_bytes);
            println!("bytes allocated by measured steps {}", report.step_alloc_bytes);
            if report.frames >= 30 {
                let s = bench::latency_slope_test(&report.latencies_ms, 10, 0.1)?;
                println!(
                    "latency slope {:.3e} ms/frame, 99% CI [{:.3e}, {:.3e}], flat={}",
                    s.slope, s.ci99.0, s.ci99.1, s.flat
                );
            }
        }
        ModeArg::Chunk => {
            let lens: Vec<usize> = (1..=4).map(|k| (a.frames * k / 4).max(2)).collect();
            let curve = bench::bench_chunk_memory(&params, &lens)?;
            for (t, b) in &curve.points {
                println!("T={t} peak_bytes={b}");
            }
            println!("affine fit: {:.1} bytes/frame + {:.0}, R2={:.5}", curve.slope, curve.intercept, curve.r2);
        }
    }
    if let Some(path) = &a.report {
        fs::write(path, bench::efficiency_csv(&rows))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(usage("--threads must be >= 1"));
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, cli.threads),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
