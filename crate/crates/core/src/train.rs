//! Supervised training on synthetic clips: MSE loss, hand-derived
//! gradients, Adam, and the time-scaling augmentation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{time_scale, Clip, FrameTensor, HR_MAX_BPM, HR_MIN_BPM};
use crate::data::synth::{MAX_SCALE_FACTOR, MIN_SCALE_FACTOR};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{backward, CheckpointContents, forward_chunk_values, forward_train, ModelParams, Tensor};

/// Mean of `(pred − target)²` over all elements.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse of empty input"));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// `B` equal-length chunks and their standardized targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub clips: Vec<FrameTensor>,
    pub targets: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new(clips: Vec<FrameTensor>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::invalid("batch needs at least one clip"));
        }
        if clips.len() != targets.len() {
            return Err(Error::shape(format!("{} clips vs {} targets", clips.len(), targets.len())));
        }
        let t = clips[0].frames();
        if clips.iter().zip(&targets).any(|(c, y)| c.frames() != t || y.len() != t) {
            return Err(Error::shape("every clip and target in a batch needs the same length"));
        }
        Ok(Self { clips, targets })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    fn elements(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }
}

fn run_parallel<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Batch MSE and its gradient. Per-clip gradients are summed in clip order,
/// so the result does not depend on `threads`.
pub fn loss_and_grad(params: &ModelParams<f64>, batch: &Batch, threads: usize) -> Result<(f64, ModelParams<f64>)> {
    let total = batch.elements() as f64;
    let one = |i: usize| -> Result<(f64, ModelParams<f64>)> {
        let cache = forward_train(params, &batch.clips[i])?;
        let target = &batch.targets[i];
        let mut sq = 0.0;
        let gout: Vec<f64> = cache
            .output
            .iter()
            .zip(target)
            .map(|(p, t)| {
                sq += (p - t) * (p - t);
                2.0 * (p - t) / total
            })
            .collect();
        let mut g = params.zeros_like();
        backward(params, &cache, &gout, &mut g)?;
        Ok((sq, g))
    };
    let parts: Vec<Result<(f64, ModelParams<f64>)>> = if threads <= 1 {
        (0..batch.len()).map(one).collect()
    } else {
        run_parallel(threads, || (0..batch.len()).into_par_iter().map(one).collect())?
    };
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    for part in parts {
        let (sq, g) = part?;
        loss += sq;
        add_params(&mut grads, &g);
    }
    loss /= total;
    if !loss.is_finite() {
        return Err(Error::numerical(format!("loss is {loss}")));
    }
    let mut bad = None;
    grads.for_each(|name, t| {
        if bad.is_none() && t.data.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    if let Some(name) = bad {
        return Err(Error::numerical(format!("non-finite gradient in {name} (loss {loss})")));
    }
    Ok((loss, grads))
}

fn add_params(dst: &mut ModelParams<f64>, src: &ModelParams<f64>) {
    let mut flat = Vec::new();
    src.for_each(|_, t| flat.push(&t.data));
    let mut i = 0;
    dst.for_each_mut(|_, t| {
        for (a, b) in t.data.iter_mut().zip(flat[i]) {
            *a += b;
        }
        i += 1;
    });
}

pub fn grad_norm(grads: &ModelParams<f64>) -> f64 {
    let mut ss = 0.0;
    grads.for_each(|_, t| ss += t.data.iter().map(|v| v * v).sum::<f64>());
    ss.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moments in parameter visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams<f64>, cfg: AdamConfig) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        params.for_each(|n, t| {
            names.push(n.to_string());
            m.push(vec![0.0; t.len()]);
        });
        Self { cfg, step: 0, names, v: m.clone(), m }
    }

    /// Moments as named tensors (`adam.m.<name>`, `adam.v.<name>`).
    pub fn to_tensors(&self) -> Vec<(String, Tensor<f64>)> {
        let mut out = Vec::new();
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for (name, data) in self.names.iter().zip(moments) {
                if !data.is_empty() {
                    out.push((format!("adam.{kind}.{name}"), Tensor { shape: vec![data.len()], data: data.clone() }));
                }
            }
        }
        out
    }

    /// Rebuilds the state from [`AdamState::to_tensors`] output.
    pub fn from_tensors(params: &ModelParams<f64>, cfg: AdamConfig, step: u64, tensors: &[(String, Tensor<f64>)]) -> Result<Self> {
        let mut st = Self::new(params, cfg);
        st.step = step;
        for (kind, moments) in [("m", &mut st.m), ("v", &mut st.v)] {
            for (name, data) in st.names.iter().zip(moments.iter_mut()) {
                if data.is_empty() {
                    continue;
                }
                let key = format!("adam.{kind}.{name}");
                let t = tensors
                    .iter()
                    .find(|(n, _)| *n == key)
                    .ok_or_else(|| Error::format(format!("checkpoint is missing {key}")))?;
                if t.1.data.len() != data.len() {
                    return Err(Error::format(format!("{key} has the wrong length")));
                }
                data.copy_from_slice(&t.1.data);
            }
        }
        Ok(st)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams<f64>, grads: &ModelParams<f64>) {
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    let c1 = 1.0 - beta1.powi(state.step.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - beta2.powi(state.step.min(i32::MAX as u64) as i32);
    let mut flat = Vec::new();
    grads.for_each(|_, t| flat.push(&t.data));
    let mut i = 0;
    params.for_each_mut(|_, t| {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], flat[i]);
        for k in 0..t.data.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            t.data[k] -= lr * mh / (vh.sqrt() + eps);
        }
        i += 1;
    });
}

/// How the augmentation picks each clip's time-scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSampling {
    /// Target heart rate uniform over the reachable part of [30, 180] BPM.
    UniformHr,
    /// Factor uniform over the reachable interval.
    UniformFactor,
}

impl std::str::FromStr for FactorSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_hr" => Ok(Self::UniformHr),
            "uniform_factor" => Ok(Self::UniformFactor),
            _ => Err(Error::invalid(format!("unknown factor sampling {s:?}"))),
        }
    }
}

impl std::fmt::Display for FactorSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UniformHr => "uniform_hr",
            Self::UniformFactor => "uniform_factor",
        })
    }
}

/// Appends `round(fraction·len)` time-scaled copies of randomly chosen clips.
/// Factors keep the heart rate in range and the clip at least `min_len`
/// frames long.
pub fn augment(clips: &[Clip], fraction: f64, min_len: usize, sampling: FactorSampling, seed: u64) -> Result<Vec<Clip>> {
    if !(0.0..=10.0).contains(&fraction) {
        return Err(Error::invalid(format!("augment fraction must be in [0, 10], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_0f0f_f0f0);
    let count = (fraction * clips.len() as f64).round() as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let clip = &clips[rng.random_range(0..clips.len())];
        let hr = clip.hr_bpm;
        let lo = (HR_MIN_BPM / hr).max(MIN_SCALE_FACTOR);
        let hi = (HR_MAX_BPM / hr).min(MAX_SCALE_FACTOR).min(clip.len() as f64 / min_len as f64);
        if !(lo <= hi) {
            continue;
        }
        let factor = match sampling {
            FactorSampling::UniformHr => rng.random_range(lo * hr..=hi * hr) / hr,
            FactorSampling::UniformFactor => rng.random_range(lo..=hi),
        };
        let scaled = time_scale(clip, factor.clamp(lo, hi))?;
        if scaled.len() >= min_len {
            out.push(scaled);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub chunk_len: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment_fraction: f64,
    pub factor_sampling: FactorSampling,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            chunk_len: 160,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            augment_fraction: 0.3,
            factor_sampling: FactorSampling::UniformHr,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Writes the training keys. `seed` is shared with the model config and
    /// left to it; `threads` is a runtime choice and not recorded.
    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("epochs", self.epochs);
        kv.set("chunk_len", self.chunk_len);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("augment_fraction", self.augment_fraction);
        kv.set("factor_sampling", self.factor_sampling);
    }

    /// Reads the training keys from `kv`, defaulting missing ones from `base`.
    pub fn from_kv(kv: &KeyValues, base: &TrainConfig) -> Result<Self> {
        Ok(Self {
            epochs: kv.get("epochs")?.unwrap_or(base.epochs),
            chunk_len: kv.get("chunk_len")?.unwrap_or(base.chunk_len),
            batch_size: kv.get("batch_size")?.unwrap_or(base.batch_size),
            adam: AdamConfig {
                lr: kv.get("lr")?.unwrap_or(base.adam.lr),
                beta1: kv.get("beta1")?.unwrap_or(base.adam.beta1),
                beta2: kv.get("beta2")?.unwrap_or(base.adam.beta2),
                eps: kv.get("adam_eps")?.unwrap_or(base.adam.eps),
            },
            seed: kv.get("seed")?.unwrap_or(base.seed),
            augment_fraction: kv.get("augment_fraction")?.unwrap_or(base.augment_fraction),
            factor_sampling: kv.get("factor_sampling")?.unwrap_or(base.factor_sampling),
            threads: base.threads,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,step,loss,grad_norm,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{:.3}\n", r.epoch, r.step, r.loss, r.grad_norm, r.wall_ms));
        }
        s
    }

    /// Mean batch loss per epoch, in epoch order.
    pub fn epoch_losses(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.epoch => {
                    last.1 += r.loss;
                    last.2 += 1;
                }
                _ => out.push((r.epoch, r.loss, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

/// Where training stopped, for resuming.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub adam: AdamState,
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f64>,
    pub progress: TrainProgress,
    pub log: TrainLog,
}

impl TrainOutcome {
    /// Parameters, optimizer moments and the epoch/step counters, ready to
    /// save and later resume from.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> CheckpointContents {
        let mut ckpt = CheckpointContents::new(self.params.clone());
        let mut kv = KeyValues::new();
        cfg.to_kv(&mut kv);
        for k in kv.keys().filter(|k| *k != "seed") {
            ckpt.meta.set(&format!("train.{k}"), kv.raw(k).unwrap_or_default());
        }
        ckpt.meta.set("epoch", self.progress.epoch);
        ckpt.meta.set("step", self.progress.adam.step);
        ckpt.extra = self.progress.adam.to_tensors();
        ckpt
    }
}

/// Parameters and training progress stored by [`TrainOutcome::to_checkpoint`].
pub fn resume_from(ckpt: &CheckpointContents, adam: AdamConfig) -> Result<(ModelParams<f64>, TrainProgress)> {
    let missing = |k: &str| Error::format(format!("checkpoint has no {k} entry, so it cannot be resumed"));
    let epoch: usize = ckpt.meta.get("epoch")?.ok_or_else(|| missing("epoch"))?;
    let step: u64 = ckpt.meta.get("step")?.ok_or_else(|| missing("step"))?;
    let state = AdamState::from_tensors(&ckpt.params, adam, step, &ckpt.extra)?;
    Ok((ckpt.params.clone(), TrainProgress { adam: state, epoch }))
}

/// Slices every clip into non-overlapping `chunk_len` windows; targets are
/// the clip's BVP standardized over the whole clip.
pub fn make_chunks(clips: &[Clip], chunk_len: usize) -> Result<Vec<(FrameTensor, Vec<f64>)>> {
    let mut out = Vec::new();
    for clip in clips {
        let target = clip.bvp.standardized();
        for k in 0..clip.len() / chunk_len {
            let start = k * chunk_len;
            out.push((clip.frames.slice(start, chunk_len)?, target.samples()[start..start + chunk_len].to_vec()));
        }
    }
    Ok(out)
}

/// Trains for `cfg.epochs` more epochs, optionally continuing from `resume`.
/// With the same seed the result is identical for any thread count.
pub fn train_loop(
    init: ModelParams<f64>,
    clips: &[Clip],
    cfg: &TrainConfig,
    resume: Option<TrainProgress>,
) -> Result<TrainOutcome> {
    if clips.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.chunk_len < 2 || cfg.batch_size == 0 {
        return Err(Error::invalid("chunk_len must be >= 2 and batch_size >= 1"));
    }
    let shortest = clips.iter().map(Clip::len).min().unwrap_or(0);
    if cfg.chunk_len > shortest {
        return Err(Error::invalid(format!("chunk_len {} exceeds the shortest clip ({shortest} frames)", cfg.chunk_len)));
    }
    let mut all = clips.to_vec();
    all.extend(augment(clips, cfg.augment_fraction, cfg.chunk_len, cfg.factor_sampling, cfg.seed)?);
    let chunks = make_chunks(&all, cfg.chunk_len)?;

    let mut params = init;
    let mut progress = match resume {
        Some(p) => p,
        None => TrainProgress { adam: AdamState::new(&params, cfg.adam), epoch: 0 },
    };
    progress.adam.cfg = cfg.adam;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    for _ in 0..cfg.epochs {
        let epoch = progress.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let started = Instant::now();
            let batch = Batch::new(
                idx.iter().map(|&i| chunks[i].0.clone()).collect(),
                idx.iter().map(|&i| chunks[i].1.clone()).collect(),
            )?;
            let (loss, grads) = loss_and_grad(&params, &batch, cfg.threads)?;
            let gn = grad_norm(&grads);
            adam_step(&mut progress.adam, &mut params, &grads);
            params.check_finite()?;
            log.rows.push(LogRow {
                epoch,
                step: progress.adam.step,
                loss,
                grad_norm: gn,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        progress.epoch += 1;
    }
    Ok(TrainOutcome { params, progress, log })
}

/// Gradient magnitude below which a group counts as identically zero; the
/// central difference itself is only accurate to about `1e-11` at `h = 1e-5`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Per-group finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub entries: usize,
    /// `max |analytic − numeric|`
    pub abs_err: f64,
    /// `max(max |numeric|, max |analytic|)`
    pub scale: f64,
    /// `abs_err / max(scale, GRAD_CHECK_FLOOR)`
    pub rel_err: f64,
}

pub fn gradient_check(params: &ModelParams<f64>, frames: &FrameTensor, target: &[f64], h: f64) -> Result<Vec<GradCheck>> {
    let batch = Batch::new(vec![frames.clone()], vec![target.to_vec()])?;
    let (_, grads) = loss_and_grad(params, &batch, 1)?;
    let loss_at = |p: &ModelParams<f64>| -> Result<f64> { mse_loss(&forward_chunk_values(p, frames)?, target) };
    let mut analytic = Vec::new();
    grads.for_each(|n, t| analytic.push((n.to_string(), t.data.clone())));
    let mut out = Vec::with_capacity(analytic.len());
    for (gi, (name, g)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; g.len()];
        for (k, nv) in numeric.iter_mut().enumerate() {
            let nudge = |delta: f64| {
                let mut p = params.clone();
                let mut i = 0;
                p.for_each_mut(|_, t| {
                    if i == gi {
                        t.data[k] += delta;
                    }
                    i += 1;
                });
                p
            };
            *nv = (loss_at(&nudge(h))? - loss_at(&nudge(-h))?) / (2.0 * h);
        }
        let diff = g.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        let scale = g.iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max);
        out.push(GradCheck {
            name: name.clone(),
            entries: g.len(),
            abs_err: diff,
            scale,
            rel_err: diff / scale.max(GRAD_CHECK_FLOOR),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clip, SynthConfig};
    use crate::model::{init_model, ModelConfig};

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn tiny_model() -> ModelParams<f64> {
        let cfg = ModelConfig {
            input_h: 8,
            input_w: 8,
            encoder_channels: vec![4, 4],
            feature_dim: 8,
            state_dim: 4,
            ..ModelConfig::default()
        };
        init_model(&cfg).unwrap()
    }

    fn tiny_batch(params: &ModelParams<f64>, n: usize) -> Batch {
        let clip = synth_clip(&SynthConfig {
            resolution: (8, 8),
            duration_s: 2.0,
            noise_sigma: 0.01,
            ..SynthConfig::default()
        })
        .unwrap();
        let chunks: Vec<_> = (0..n).map(|k| clip.frames.slice(k * 16, 16).unwrap()).collect();
        let targets = (0..n).map(|k| clip.bvp.standardized().samples()[k * 16..k * 16 + 16].to_vec()).collect();
        assert!(params.config.input_h == 8);
        Batch::new(chunks, targets).unwrap()
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let params = tiny_model();
        let mut batch = tiny_batch(&params, 2);
        for (clip, t) in batch.clips.iter().zip(batch.targets.iter_mut()) {
            *t = forward_chunk_values(&params, clip).unwrap();
        }
        let (loss, grads) = loss_and_grad(&params, &batch, 1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad_norm(&grads), 0.0);
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let params = tiny_model();
        let batch = tiny_batch(&params, 3);
        let (l1, g1) = loss_and_grad(&params, &batch, 1).unwrap();
        let (l3, g3) = loss_and_grad(&params, &batch, 3).unwrap();
        assert_eq!(l1, l3);
        assert_eq!(g1, g3);
    }

    #[test]
    fn doubling_the_loss_doubles_gradients() {
        let params = tiny_model();
        let batch = tiny_batch(&params, 1);
        let cache = forward_train(&params, &batch.clips[0]).unwrap();
        let g1: Vec<f64> = cache.output.iter().zip(&batch.targets[0]).map(|(p, t)| 2.0 * (p - t) / 16.0).collect();
        let g2: Vec<f64> = g1.iter().map(|v| 2.0 * v).collect();
        let (mut a, mut b) = (params.zeros_like(), params.zeros_like());
        backward(&params, &cache, &g1, &mut a).unwrap();
        backward(&params, &cache, &g2, &mut b).unwrap();
        let mut fa = Vec::new();
        a.for_each(|_, t| fa.extend_from_slice(&t.data));
        let mut fb = Vec::new();
        b.for_each(|_, t| fb.extend_from_slice(&t.data));
        for (x, y) in fa.iter().zip(&fb) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn adam_examples() {
        let mut params = tiny_model();
        let before = params.clone();
        let zero = params.zeros_like();
        let mut st = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut st, &mut params, &zero);
        assert_eq!(params, before);
        assert_eq!(st.step, 1);

        let mut grads = params.zeros_like();
        grads.for_each_mut(|_, t| {
            for (i, v) in t.data.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 0.5 } else { -3.0 };
            }
        });
        let mut st = AdamState::new(&params, AdamConfig::default());
        let mut p = params.clone();
        adam_step(&mut st, &mut p, &grads);
        let mut deltas = Vec::new();
        let mut fp = Vec::new();
        params.for_each(|_, t| fp.extend_from_slice(&t.data));
        let mut fq = Vec::new();
        p.for_each(|_, t| fq.extend_from_slice(&t.data));
        let mut fg = Vec::new();
        grads.for_each(|_, t| fg.extend_from_slice(&t.data));
        for ((a, b), g) in fp.iter().zip(&fq).zip(&fg) {
            deltas.push(((b - a), *g));
        }
        for (d, g) in deltas {
            assert!((d + 1e-3 * g.signum()).abs() < 1e-9, "{d} {g}");
        }

        let mut st = AdamState::new(&params, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        let mut p = params.clone();
        adam_step(&mut st, &mut p, &grads);
        assert_eq!(p, params);
    }

    #[test]
    fn adam_tensors_round_trip() {
        let params = tiny_model();
        let mut st = AdamState::new(&params, AdamConfig::default());
        st.m[0][0] = 1.5;
        st.v[3][1] = 0.25;
        st.step = 9;
        let back = AdamState::from_tensors(&params, st.cfg, 9, &st.to_tensors()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn augment_respects_ranges() {
        let clips: Vec<Clip> = [40.0, 90.0, 170.0]
            .iter()
            .map(|&hr| {
                synth_clip(&SynthConfig { hr_bpm: hr, resolution: (4, 4), duration_s: 10.0, ..SynthConfig::default() }).unwrap()
            })
            .collect();
        for sampling in [FactorSampling::UniformHr, FactorSampling::UniformFactor] {
            let aug = augment(&clips, 3.0, 128, sampling, 1).unwrap();
            assert_eq!(aug.len(), 9);
            for c in &aug {
                assert!((HR_MIN_BPM..=HR_MAX_BPM).contains(&c.hr_bpm));
                assert!(c.len() >= 128);
            }
        }
        assert!(augment(&clips, 0.0, 128, FactorSampling::UniformHr, 1).unwrap().is_empty());
    }

    #[test]
    fn train_loop_rejects_bad_input_and_is_deterministic() {
        let params = tiny_model();
        let cfg = TrainConfig { epochs: 2, chunk_len: 16, batch_size: 4, ..TrainConfig::default() };
        assert!(train_loop(params.clone(), &[], &cfg, None).is_err());
        let clip = synth_clip(&SynthConfig { resolution: (8, 8), duration_s: 2.0, ..SynthConfig::default() }).unwrap();
        let long = TrainConfig { chunk_len: 61, ..cfg.clone() };
        assert!(train_loop(params.clone(), &[clip.clone()], &long, None).is_err());
        let a = train_loop(params.clone(), &[clip.clone()], &cfg, None).unwrap();
        let b = train_loop(params.clone(), &[clip.clone()], &TrainConfig { threads: 2, ..cfg.clone() }, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.rows.last().unwrap().loss, b.log.rows.last().unwrap().loss);
        assert_eq!(a.log.epoch_losses().len(), 2);

        let resumed = train_loop(a.params.clone(), &[clip], &cfg, Some(a.progress.clone())).unwrap();
        assert_eq!(resumed.log.rows[0].step, a.progress.adam.step + 1);
        assert_eq!(resumed.log.rows[0].epoch, 2);

        // Through a checkpoint the continuation is bit-identical.
        let ckpt = a.to_checkpoint(&cfg);
        let (p, prog) = resume_from(&ckpt, cfg.adam).unwrap();
        assert_eq!(prog, a.progress);
        let again = train_loop(p, &[synth_clip(&SynthConfig { resolution: (8, 8), duration_s: 2.0, ..SynthConfig::default() }).unwrap()], &cfg, Some(prog)).unwrap();
        assert_eq!(again.params, resumed.params);
        assert!(resume_from(&CheckpointContents::new(a.params.clone()), cfg.adam).is_err());
    }

    #[test]
    fn train_config_kv_round_trip() {
        let cfg = TrainConfig {
            epochs: 3,
            chunk_len: 90,
            adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            seed: 5,
            factor_sampling: FactorSampling::UniformFactor,
            ..TrainConfig::default()
        };
        let mut kv = KeyValues::new();
        cfg.to_kv(&mut kv);
        kv.set("seed", 5);
        assert_eq!(TrainConfig::from_kv(&kv, &TrainConfig::default()).unwrap(), cfg);
        let bad = KeyValues::parse("epochs=many").unwrap();
        assert!(TrainConfig::from_kv(&bad, &cfg).is_err());
    }

    #[test]
    fn csv_log_format() {
        let log = TrainLog { rows: vec![LogRow { epoch: 0, step: 1, loss: 0.5, grad_norm: 2.0, wall_ms: 1.25 }] };
        assert_eq!(log.to_csv(), "epoch,step,loss,grad_norm,wall_ms\n0,1,0.5,2,1.250\n");
    }
}
