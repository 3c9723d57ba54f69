//! Frame and pulse-signal containers, their on-disk formats, and the
//! synthetic pulsatile-video generator used for desk-scale training.

pub mod container;
pub mod dataset;
pub mod signal_io;
pub mod synth;

pub use container::{read_tensor, write_tensor, RawTensor, TensorData};
pub use dataset::{read_dataset, synth_set, write_dataset};
pub use signal_io::{read_signal, write_signal};
pub use synth::{synth_clip, time_scale, SynthConfig, HR_MAX_BPM, HR_MIN_BPM};

use crate::error::{Error, Result};

/// Frame rate assumed when a tensor file carries no rate of its own.
pub const DEFAULT_FPS: f64 = 30.0;

/// A `T×H×W×C` sequence of frames, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    fps: f64,
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn new(dims: [usize; 4], fps: f64, data: Vec<f32>) -> Result<Self> {
        let [t, h, w, c] = dims;
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!("frame tensor dims must be >= 1, got {dims:?}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be > 0, got {fps}")));
        }
        if data.len() != t * h * w * c {
            return Err(Error::shape(format!(
                "frame tensor {dims:?} needs {} values, got {}",
                t * h * w * c,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite frame value at index {i}")));
        }
        Ok(Self { t, h, w, c, fps, data })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn with_fps(mut self, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be > 0, got {fps}")));
        }
        self.fps = fps;
        Ok(self)
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Frames `start..start + len` as a new tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.t {
            return Err(Error::shape(format!(
                "slice {start}+{len} out of range for {} frames",
                self.t
            )));
        }
        let n = self.frame_len();
        Ok(Self {
            t: len,
            h: self.h,
            w: self.w,
            c: self.c,
            fps: self.fps,
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Per-frame spatial mean of one channel.
    pub fn channel_means(&self, channel: usize) -> Vec<f64> {
        let hw = (self.h * self.w) as f64;
        (0..self.t)
            .map(|t| {
                self.frame(t)
                    .iter()
                    .skip(channel)
                    .step_by(self.c)
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / hw
            })
            .collect()
    }
}

/// Per-frame blood-volume-pulse samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSignal {
    samples: Vec<f64>,
    fps: f64,
}

impl BvpSignal {
    pub fn new(samples: Vec<f64>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be > 0, got {fps}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite BVP sample at index {i}")));
        }
        Ok(Self { samples, fps })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::shape("signal slice out of range"));
        }
        Ok(Self { samples: self.samples[start..start + len].to_vec(), fps: self.fps })
    }

    /// Zero mean, unit (population) variance. Constant signals map to zeros.
    pub fn standardized(&self) -> Self {
        Self { samples: standardize(&self.samples), fps: self.fps }
    }
}

pub(crate) fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        x.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// A synthetic or loaded clip: frames, aligned ground-truth pulse, and the
/// heart rate that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: FrameTensor,
    pub bvp: BvpSignal,
    pub hr_bpm: f64,
}

impl Clip {
    pub fn new(frames: FrameTensor, bvp: BvpSignal, hr_bpm: f64) -> Result<Self> {
        if frames.frames() != bvp.len() {
            return Err(Error::shape(format!(
                "clip has {} frames but {} BVP samples",
                frames.frames(),
                bvp.len()
            )));
        }
        Ok(Self { frames, bvp, hr_bpm })
    }

    pub fn len(&self) -> usize {
        self.frames.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
