//! Synthetic pulsatile video and time-scaling augmentation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{standardize, BvpSignal, Clip, FrameTensor};
use crate::error::{Error, Result};

pub const HR_MIN_BPM: f64 = 30.0;
pub const HR_MAX_BPM: f64 = 180.0;

/// Share of the pulse injected into (R, G, B).
pub const PULSE_CHANNEL_WEIGHTS: [f64; 3] = [0.2, 0.7, 0.1];

const SKIN_TONE: [f64; 3] = [0.62, 0.45, 0.36];
const PATTERN_COMPONENTS: usize = 3;
const PATTERN_AMPLITUDE: f64 = 0.04;
const MAX_CLIPPED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub hr_bpm: f64,
    pub duration_s: f64,
    pub fps: f64,
    pub resolution: (usize, usize),
    /// Fraction of pixel range.
    pub pulse_amplitude: f64,
    /// Gaussian pixel noise, fraction of pixel range.
    pub noise_sigma: f64,
    /// Global drift per frame.
    pub trend_slope: f64,
    pub harmonic_ratio: f64,
    pub jitter_px: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hr_bpm: 72.0,
            duration_s: 10.0,
            fps: 30.0,
            resolution: (32, 32),
            pulse_amplitude: 0.01,
            noise_sigma: 0.0,
            trend_slope: 0.0,
            harmonic_ratio: 0.5,
            jitter_px: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&self.hr_bpm) {
            return Err(Error::invalid(format!(
                "hr_bpm {} outside [{HR_MIN_BPM}, {HR_MAX_BPM}]",
                self.hr_bpm
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.fps <= 2.0 * self.hr_bpm / 60.0 {
            return Err(Error::invalid(format!(
                "fps {} violates Nyquist for {} BPM",
                self.fps, self.hr_bpm
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) || self.frames() == 0 {
            return Err(Error::invalid("duration must cover at least one frame"));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::invalid("resolution must be non-zero"));
        }
        for (name, v) in [
            ("pulse_amplitude", self.pulse_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("harmonic_ratio", self.harmonic_ratio),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.trend_slope.is_finite() {
            return Err(Error::invalid("trend_slope must be finite"));
        }
        Ok(())
    }

    /// Ground-truth pulse at time `sec`.
    pub fn pulse(&self, sec: f64) -> f64 {
        let f = self.hr_bpm / 60.0;
        (2.0 * PI * f * sec).sin() + self.harmonic_ratio * (4.0 * PI * f * sec + PI / 4.0).sin()
    }
}

struct SkinPattern {
    // (amplitude, fy, fx, phase) per component, per channel
    comps: Vec<[f64; 4]>,
    h: f64,
    w: f64,
}

impl SkinPattern {
    fn new(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let comps = (0..PATTERN_COMPONENTS)
            .map(|_| {
                [
                    PATTERN_AMPLITUDE * rng.random_range(0.5..1.0),
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.0..2.0 * PI),
                ]
            })
            .collect();
        Self { comps, h: h as f64, w: w as f64 }
    }

    fn value(&self, y: f64, x: f64, channel: usize) -> f64 {
        let tone = SKIN_TONE[channel % 3];
        let texture: f64 = self
            .comps
            .iter()
            .map(|[a, fy, fx, ph]| a * (2.0 * PI * (fy * y / self.h + fx * x / self.w) + ph).cos())
            .sum();
        // Channels share the texture with a mild tint.
        tone + texture * (1.0 - 0.2 * channel as f64)
    }
}

/// Generates frames (`T×H×W×3`) and the standardized ground-truth pulse.
///
/// Each frame is a smooth skin pattern, shifted by up to `jitter_px` pixels,
/// plus the pulse weighted by [`PULSE_CHANNEL_WEIGHTS`], a global drift of
/// `trend_slope·t` (t = 1…T) and Gaussian noise. Deterministic in `seed`.
pub fn synth_clip(cfg: &SynthConfig) -> Result<Clip> {
    cfg.validate()?;
    let (h, w) = cfg.resolution;
    let c = 3;
    let t_len = cfg.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pattern = SkinPattern::new(&mut rng, h, w);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0))
        .map_err(|e| Error::invalid(format!("noise_sigma: {e}")))?;
    let jitter = cfg.jitter_px as i64;

    let mut data = Vec::with_capacity(t_len * h * w * c);
    let mut pulse = Vec::with_capacity(t_len);
    let mut clipped = 0usize;
    for t in 1..=t_len {
        let sec = (t - 1) as f64 / cfg.fps;
        let s = cfg.pulse(sec);
        pulse.push(s);
        let (dy, dx) = if jitter > 0 {
            (rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter))
        } else {
            (0, 0)
        };
        let drift = cfg.trend_slope * t as f64;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut v = pattern.value((y as i64 + dy) as f64, (x as i64 + dx) as f64, ch)
                        + cfg.pulse_amplitude * PULSE_CHANNEL_WEIGHTS[ch] * s
                        + drift;
                    if cfg.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    if !(0.0..=1.0).contains(&v) {
                        clipped += 1;
                        v = v.clamp(0.0, 1.0);
                    }
                    data.push(v as f32);
                }
            }
        }
    }
    let total = data.len();
    if clipped as f64 > MAX_CLIPPED_FRACTION * total as f64 {
        return Err(Error::invalid(format!(
            "{clipped} of {total} pixels fall outside [0, 1] (limit {:.0}%)",
            MAX_CLIPPED_FRACTION * 100.0
        )));
    }
    let frames = FrameTensor::new([t_len, h, w, c], cfg.fps, data)?;
    let bvp = BvpSignal::new(standardize(&pulse), cfg.fps)?;
    Clip::new(frames, bvp, cfg.hr_bpm)
}

pub const MIN_SCALE_FACTOR: f64 = 0.2;
pub const MAX_SCALE_FACTOR: f64 = 5.0;

/// Resamples a clip in time by `factor` (linear interpolation), producing
/// `round(T / factor)` frames at the same fps, so the pulse rate is
/// multiplied by `factor`.
pub fn time_scale(clip: &Clip, factor: f64) -> Result<Clip> {
    if !(MIN_SCALE_FACTOR..=MAX_SCALE_FACTOR).contains(&factor) {
        return Err(Error::invalid(format!(
            "scale factor {factor} outside [{MIN_SCALE_FACTOR}, {MAX_SCALE_FACTOR}]"
        )));
    }
    let hr = clip.hr_bpm * factor;
    if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&hr) {
        return Err(Error::invalid(format!(
            "scaled heart rate {hr} BPM outside [{HR_MIN_BPM}, {HR_MAX_BPM}]"
        )));
    }
    let t_in = clip.len();
    let t_out = ((t_in as f64 / factor).round() as usize).max(1);
    let n = clip.frames.frame_len();
    let [_, h, w, c] = clip.frames.dims();
    let last = (t_in - 1) as f64;
    let mut data = Vec::with_capacity(t_out * n);
    let mut bvp = Vec::with_capacity(t_out);
    let src = clip.bvp.samples();
    for j in 0..t_out {
        let pos = (j as f64 * factor).min(last);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(t_in - 1);
        let frac = pos - i0 as f64;
        let (a, b) = (clip.frames.frame(i0), clip.frames.frame(i1));
        data.extend(
            a.iter()
                .zip(b)
                .map(|(&x0, &x1)| ((1.0 - frac) * x0 as f64 + frac * x1 as f64) as f32),
        );
        bvp.push((1.0 - frac) * src[i0] + frac * src[i1]);
    }
    let frames = FrameTensor::new([t_out, h, w, c], clip.frames.fps(), data)?;
    Clip::new(frames, BvpSignal::new(bvp, clip.bvp.fps())?, hr)
}
