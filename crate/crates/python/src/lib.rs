//! Python bindings: clip synthesis and I/O, normalization, heart-rate
//! estimation, model inference in chunk and streaming modes, and training.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use me_rppg::config::KeyValues;
use me_rppg::data::{self, BvpSignal, FrameTensor, SynthConfig};
use me_rppg::model::{self, CheckpointContents, ModelConfig, ModelParams, ModelState};
use me_rppg::signal::{self, HrBand};
use me_rppg::train::{self, TrainConfig};
use me_rppg::{tn, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for me_rppg::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Video frames, `(frames, height, width, channels)` in row-major order.
#[pyclass(name = "Frames", module = "me_rppg_py", skip_from_py_object)]
#[derive(Clone)]
struct PyFrames {
    inner: FrameTensor,
}

#[pymethods]
impl PyFrames {
    #[new]
    #[pyo3(signature = (dims, data, fps = 30.0))]
    fn new(dims: [usize; 4], data: Vec<f32>, fps: f64) -> PyResult<Self> {
        Ok(Self { inner: FrameTensor::new(dims, fps, data).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, fps = 30.0))]
    fn read(path: PathBuf, fps: f64) -> PyResult<Self> {
        Ok(Self { inner: data::read_tensor(&path).py()?.with_fps(fps).py()? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_tensor(&path, &self.inner).py()
    }

    #[getter]
    fn dims(&self) -> [usize; 4] {
        self.inner.dims()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps()
    }

    fn __len__(&self) -> usize {
        self.inner.frames()
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn frame(&self, t: usize) -> PyResult<Vec<f32>> {
        if t >= self.inner.frames() {
            return Err(PyValueError::new_err(format!("frame {t} out of range")));
        }
        Ok(self.inner.frame(t).to_vec())
    }

    fn slice(&self, start: usize, len: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.slice(start, len).py()? })
    }

    fn __repr__(&self) -> String {
        let [t, h, w, c] = self.inner.dims();
        format!("Frames(frames={t}, height={h}, width={w}, channels={c}, fps={})", self.inner.fps())
    }
}

/// A synthetic clip: frames, ground-truth pulse wave and its heart rate.
#[pyclass(name = "Clip", module = "me_rppg_py", get_all)]
struct PyClip {
    frames: Py<PyFrames>,
    bvp: Vec<f64>,
    hr_bpm: f64,
    fps: f64,
}

#[pyfunction]
#[pyo3(signature = (hr_bpm, duration_s = 10.0, fps = 30.0, height = 32, width = 32, pulse_amplitude = 0.01,
                    noise_sigma = 0.0, trend_slope = 0.0, harmonic_ratio = None, jitter_px = 0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synth_clip(
    py: Python<'_>,
    hr_bpm: f64,
    duration_s: f64,
    fps: f64,
    height: usize,
    width: usize,
    pulse_amplitude: f64,
    noise_sigma: f64,
    trend_slope: f64,
    harmonic_ratio: Option<f64>,
    jitter_px: usize,
    seed: u64,
) -> PyResult<PyClip> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        hr_bpm,
        duration_s,
        fps,
        resolution: (height, width),
        pulse_amplitude,
        noise_sigma,
        trend_slope,
        harmonic_ratio: harmonic_ratio.unwrap_or(defaults.harmonic_ratio),
        jitter_px,
        seed,
    };
    let clip = data::synth_clip(&cfg).py()?;
    Ok(PyClip {
        frames: Py::new(py, PyFrames { inner: clip.frames })?,
        bvp: clip.bvp.samples().to_vec(),
        hr_bpm: clip.hr_bpm,
        fps: clip.bvp.fps(),
    })
}

/// Writes `count` clips with heart rates drawn from `hr_range` to `out`.
#[pyfunction]
#[pyo3(signature = (out, count, hr_range = (40.0, 160.0), seed = 0, duration_s = 10.0, height = 32, width = 32, noise_sigma = 0.0))]
#[allow(clippy::too_many_arguments)]
fn synth_dataset(
    out: PathBuf,
    count: usize,
    hr_range: (f64, f64),
    seed: u64,
    duration_s: f64,
    height: usize,
    width: usize,
    noise_sigma: f64,
) -> PyResult<()> {
    let base = SynthConfig { duration_s, resolution: (height, width), noise_sigma, ..SynthConfig::default() };
    let items = data::synth_set(&base, count, hr_range, seed).py()?;
    data::write_dataset(&out, &items).py()
}

/// Returns `(bpm, peak_power_ratio, flagged)`.
#[pyfunction]
#[pyo3(signature = (samples, fps = 30.0))]
fn estimate_hr(samples: Vec<f64>, fps: f64) -> PyResult<(f64, f64, bool)> {
    let est = signal::estimate_hr(&BvpSignal::new(samples, fps).py()?, HrBand::default()).py()?;
    Ok((est.bpm, est.peak_power_ratio, est.flagged))
}

/// Spatially averaged green channel, standardized.
#[pyfunction]
fn green_baseline(frames: PyRef<'_, PyFrames>) -> PyResult<Vec<f64>> {
    Ok(signal::green_baseline(&frames.inner).py()?.samples().to_vec())
}

/// Per-column detrend and RMS scaling of a `(t_len, d)` row-major block.
#[pyfunction]
#[pyo3(signature = (x, t_len, d, eps = tn::DEFAULT_EPS))]
fn tn_chunk(x: Vec<f64>, t_len: usize, d: usize, eps: f64) -> PyResult<Vec<f64>> {
    tn::tn_chunk(&x, t_len, d, eps).py()
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> Option<f64> {
    signal::pearson(&a, &b)
}

#[pyclass(name = "Model", module = "me_rppg_py")]
struct PyModel {
    params: ModelParams<f64>,
    meta: KeyValues,
}

#[pymethods]
impl PyModel {
    /// Fresh model; `config` holds `key=value` lines overriding the defaults.
    #[new]
    #[pyo3(signature = (config = None, height = None, width = None, seed = None))]
    fn new(config: Option<&str>, height: Option<usize>, width: Option<usize>, seed: Option<u64>) -> PyResult<Self> {
        let kv = KeyValues::parse(config.unwrap_or("")).py()?;
        let mut base = ModelConfig::default();
        base.input_h = height.unwrap_or(base.input_h);
        base.input_w = width.unwrap_or(base.input_w);
        base.seed = seed.unwrap_or(base.seed);
        let cfg = ModelConfig::from_kv(&kv, &base).py()?;
        Ok(Self { params: model::init_model(&cfg).py()?, meta: KeyValues::new() })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = model::load_checkpoint(&path).py()?;
        Ok(Self { params: ck.params, meta: ck.meta })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut ck = CheckpointContents::new(self.params.clone());
        for k in self.meta.keys() {
            if let Some(v) = self.meta.raw(k) {
                ck.meta.set(k, v);
            }
        }
        model::save_checkpoint(&path, &ck).py()
    }

    #[getter]
    fn param_count(&self) -> usize {
        model::param_count(&self.params)
    }

    /// The model configuration as `key=value` text.
    #[getter]
    fn config(&self) -> String {
        let mut kv = KeyValues::new();
        self.params.config.to_kv(&mut kv);
        kv.to_text()
    }

    /// Whole-clip inference.
    fn forward_chunk(&self, py: Python<'_>, frames: PyRef<'_, PyFrames>) -> PyResult<Vec<f64>> {
        let f = frames.inner.clone();
        py.detach(|| model::forward_chunk_values(&self.params, &f)).py()
    }

    fn stream(&self) -> PyResult<FlowStream> {
        let params = self.params.clone();
        let state = model::flow_init(&params).py()?;
        Ok(FlowStream { params, state, seen: 0 })
    }

    /// Trains on the clips in `data_dir` and returns the per-step losses.
    #[pyo3(signature = (data_dir, epochs = 5, chunk_len = 160, batch_size = 8, lr = 1e-3, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        data_dir: PathBuf,
        epochs: usize,
        chunk_len: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let clips = data::read_dataset(&data_dir).py()?;
        let mut cfg = TrainConfig { epochs, chunk_len, batch_size, seed, ..TrainConfig::default() };
        cfg.adam.lr = lr;
        let init = self.params.clone();
        let outcome = py.detach(|| train::train_loop(init, &clips, &cfg, None)).py()?;
        let losses = outcome.log.rows.iter().map(|r| r.loss).collect();
        let ck = outcome.to_checkpoint(&cfg);
        self.params = ck.params;
        self.meta = ck.meta;
        Ok(losses)
    }

    fn __repr__(&self) -> String {
        let c = &self.params.config;
        format!("Model(input={}x{}x{}, params={})", c.input_h, c.input_w, c.in_channels, model::param_count(&self.params))
    }
}

/// Frame-by-frame inference with fixed-size recurrent state.
#[pyclass(module = "me_rppg_py")]
struct FlowStream {
    params: ModelParams<f64>,
    state: ModelState<f64>,
    seen: usize,
}

#[pymethods]
impl FlowStream {
    fn step(&mut self, frame: Vec<f32>) -> PyResult<f64> {
        let y = model::forward_flow_step(&self.params, &mut self.state, &frame).py()?;
        self.seen += 1;
        Ok(y)
    }

    /// Runs every frame of `frames` through the stream.
    fn run(&mut self, frames: PyRef<'_, PyFrames>) -> PyResult<Vec<f64>> {
        let f = &frames.inner;
        (0..f.frames()).map(|t| self.step(f.frame(t).to_vec())).collect()
    }

    #[getter]
    fn state_bytes(&self) -> usize {
        self.state.state_bytes()
    }

    #[getter]
    fn frames_seen(&self) -> usize {
        self.seen
    }
}

#[pymodule]
fn me_rppg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrames>()?;
    m.add_class::<PyClip>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<FlowStream>()?;
    m.add_function(wrap_pyfunction!(synth_clip, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_hr, m)?)?;
    m.add_function(wrap_pyfunction!(green_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(tn_chunk, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    Ok(())
}
