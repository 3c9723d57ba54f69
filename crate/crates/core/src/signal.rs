//! Heart-rate estimation from BVP, HR metrics, and the green-channel baseline.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::{BvpSignal, FrameTensor};
use crate::error::{Error, Result};
use crate::tn;

/// Welch segment length.
pub const WELCH_WINDOW_S: f64 = 8.0;
/// Spectral grid spacing after zero-padding.
pub const GRID_BPM: f64 = 0.5;

/// Frequency band searched for the pulse peak, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Default for HrBand {
    fn default() -> Self {
        Self { lo_hz: 0.5, hi_hz: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrEstimate {
    pub bpm: f64,
    /// Peak bin power over the total power of the spectrum, so energy
    /// outside the band lowers the confidence.
    pub peak_power_ratio: f64,
    /// The peak sits on a band edge, so the true rate is likely out of band.
    pub flagged: bool,
}

/// Welch power spectrum: Hann-tapered segments with 50% overlap, each
/// mean-removed and zero-padded to `nfft`. Returns `(freqs_hz, power)`.
pub fn welch_psd(x: &[f64], fps: f64, segment: usize, nfft: usize) -> (Vec<f64>, Vec<f64>) {
    let seg = segment.min(x.len()).max(1);
    let nfft = nfft.max(seg);
    let step = (seg / 2).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let bins = nfft / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut count = 0usize;
    let mut start = 0;
    while start + seg <= x.len() {
        let s = &x[start..start + seg];
        let mean = s.iter().sum::<f64>() / seg as f64;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (&v, &w)) in s.iter().zip(&window).enumerate() {
            buf[i] = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / count.max(1) as f64;
    power.iter_mut().for_each(|p| *p *= scale);
    let freqs = (0..bins).map(|k| k as f64 * fps / nfft as f64).collect();
    (freqs, power)
}

/// Heart rate at the strongest in-band Welch peak.
///
/// When the spectrum also has a peak at half that frequency within 3 dB of
/// the maximum, the lower one is taken, so a strong second harmonic does not
/// double the estimate.
pub fn estimate_hr(bvp: &BvpSignal, band: HrBand) -> Result<HrEstimate> {
    let x = bvp.samples();
    if x.len() < 2 {
        return Err(Error::invalid("HR estimation needs at least two samples"));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("HR estimation on an all-zero signal"));
    }
    let fps = bvp.fps();
    let segment = ((WELCH_WINDOW_S * fps).round() as usize).min(x.len());
    let nfft = (60.0 * fps / GRID_BPM).ceil() as usize;
    let (freqs, power) = welch_psd(x, fps, segment, nfft);
    let in_band: Vec<usize> = (0..freqs.len())
        .filter(|&k| freqs[k] >= band.lo_hz - 1e-12 && freqs[k] <= band.hi_hz + 1e-12)
        .collect();
    let (&first, &last) = match (in_band.first(), in_band.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::invalid("band contains no spectral bins")),
    };
    let total: f64 = power.iter().sum();
    if in_band.iter().all(|&k| power[k] <= 0.0) {
        return Err(Error::invalid("no power in the HR band"));
    }
    let argmax = |lo: usize, hi: usize| -> usize {
        (lo..=hi).fold(lo, |best, k| if power[k] > power[best] { k } else { best })
    };
    let mut peak = argmax(first, last);

    let half = freqs[peak] / 2.0;
    if half >= band.lo_hz {
        let bin = (half * nfft as f64 / fps).round() as usize;
        let radius = 3;
        let lo = bin.saturating_sub(radius).max(first);
        let hi = (bin + radius).min(last);
        if lo <= hi {
            let cand = argmax(lo, hi);
            let is_local_max = cand > first
                && cand < last
                && power[cand] >= power[cand - 1]
                && power[cand] >= power[cand + 1];
            if is_local_max && power[cand] >= 0.5 * power[peak] {
                peak = cand;
            }
        }
    }
    Ok(HrEstimate {
        bpm: 60.0 * freqs[peak],
        peak_power_ratio: power[peak] / total,
        flagged: peak == first || peak == last,
    })
}

/// Per-frame spatial mean of the green channel, detrended and standardized.
pub fn green_baseline(frames: &FrameTensor) -> Result<BvpSignal> {
    if frames.channels() < 2 {
        return Err(Error::shape("green baseline needs at least two channels"));
    }
    let g = frames.channel_means(1);
    let out = if g.len() >= 2 { tn::tn_chunk(&g, g.len(), 1, tn::DEFAULT_EPS)? } else { vec![0.0; g.len()] };
    BvpSignal::new(out, frames.fps())
}

/// Pearson correlation; `None` when fewer than two points or either side is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub pearson_r: Option<f64>,
    pub n: usize,
}

pub fn metrics(pred_bpm: &[f64], true_bpm: &[f64]) -> Result<MetricReport> {
    if pred_bpm.len() != true_bpm.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} references",
            pred_bpm.len(),
            true_bpm.len()
        )));
    }
    if pred_bpm.is_empty() {
        return Err(Error::invalid("metrics need at least one pair"));
    }
    let n = pred_bpm.len();
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred_bpm.iter().zip(true_bpm) {
        let d = p - t;
        abs += d.abs();
        sq += d * d;
    }
    let mae = abs / n as f64;
    // Guard the power-mean ordering against last-bit rounding.
    let rmse = (sq / n as f64).sqrt().max(mae);
    Ok(MetricReport { mae, rmse, pearson_r: pearson(pred_bpm, true_bpm), n })
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mae,rmse,r,n";

    pub fn csv_row(&self) -> String {
        let r = self.pearson_r.map(|r| format!("{r:.6}")).unwrap_or_default();
        format!("{:.6},{:.6},{},{}", self.mae, self.rmse, r, self.n)
    }
}

/// Plain-text table with `MAE`, `RMSE`, `R` columns, one row per label.
pub fn metrics_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>6}  {:>5}", "", "MAE", "RMSE", "R", "n");
    for (label, m) in rows {
        let r = m.pearson_r.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{label:<width$}  {:>8.2}  {:>8.2}  {:>6}  {:>5}",
            m.mae, m.rmse, r, m.n
        );
    }
    out
}
