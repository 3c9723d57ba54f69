//! Temporal normalization: per-coordinate detrending and standardization.
//!
//! Chunk mode fits a least-squares line over `t = 1..T` and divides the
//! residual by its RMS. Flow mode replaces the line with a recursive moving
//! average so each step touches only a fixed-size state.
//!
//! Both modes divide by `σ + ε` rather than `σ`, so static coordinates map to
//! zero instead of NaN.

use crate::error::{Error, Result};
use crate::real::Real;

/// Smoothing factor at 30 fps (time constant about 1.7 s), slow enough that
/// the streaming trend leaves 30 BPM pulse content intact.
pub const DEFAULT_ALPHA: f64 = 0.98;
pub const DEFAULT_EPS: f64 = 1e-6;

/// `x_t ≈ slope·t + intercept` with `t` counted from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit<F> {
    pub slope: F,
    pub intercept: F,
}

impl<F: Real> TrendFit<F> {
    pub fn at(&self, t: usize) -> F {
        self.slope * F::of(t as f64) + self.intercept
    }
}

/// Least-squares line through `(t, x_t)`, `t = 1..=T`.
pub fn fit_linear_trend<F: Real>(x: &[F]) -> Result<TrendFit<F>> {
    if x.len() < 2 {
        return Err(Error::invalid(format!("trend fit needs T >= 2, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("trend fit input is not finite"));
    }
    Ok(fit_strided(x, x.len(), 1, 0))
}

/// Residual RMS at or below this is rounding noise of an exactly linear
/// column; such columns normalize to zero.
fn linear_floor<F: Real>(x: &[F], t_len: usize, stride: usize, col: usize) -> F {
    let peak = (0..t_len).map(|t| x[t * stride + col].abs()).fold(F::zero(), F::max);
    F::of(32.0) * F::epsilon() * peak
}

fn fit_strided<F: Real>(x: &[F], t_len: usize, stride: usize, col: usize) -> TrendFit<F> {
    let n = t_len as f64;
    let t_mean = (n + 1.0) / 2.0;
    let s_tt = n * (n * n - 1.0) / 12.0;
    let mut mean = 0.0;
    let mut s_tx = 0.0;
    for t in 0..t_len {
        let v = x[t * stride + col].f64();
        mean += v;
        s_tx += (t as f64 + 1.0 - t_mean) * v;
    }
    mean /= n;
    let slope = s_tx / s_tt;
    TrendFit { slope: F::of(slope), intercept: F::of(mean - slope * t_mean) }
}

/// Detrends and standardizes each column of a row-major `T×D` array.
pub fn tn_chunk<F: Real>(x: &[F], t_len: usize, d: usize, eps: F) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); x.len()];
    tn_chunk_into(x, t_len, d, eps, &mut out)?;
    Ok(out)
}

pub fn tn_chunk_into<F: Real>(x: &[F], t_len: usize, d: usize, eps: F, out: &mut [F]) -> Result<()> {
    if t_len < 2 {
        return Err(Error::invalid(format!("tn_chunk needs T >= 2, got {t_len}")));
    }
    if x.len() != t_len * d || out.len() != x.len() {
        return Err(Error::shape(format!("tn_chunk expects {t_len}x{d} values, got {}", x.len())));
    }
    if !(eps > F::zero()) {
        return Err(Error::invalid("eps must be > 0"));
    }
    for col in 0..d {
        let fit = fit_strided(x, t_len, d, col);
        let mut ss = F::zero();
        for t in 0..t_len {
            let r = x[t * d + col] - fit.at(t + 1);
            out[t * d + col] = r;
            ss += r * r;
        }
        let sigma = (ss / F::of(t_len as f64)).sqrt();
        let inv = if sigma <= linear_floor(x, t_len, d, col) { F::zero() } else { F::one() / (sigma + eps) };
        for t in 0..t_len {
            out[t * d + col] *= inv;
        }
    }
    Ok(())
}

/// Reverse-mode gradient of [`tn_chunk`] with respect to its input.
///
/// The trend coefficients and `σ` are treated as functions of `x`. With the
/// residual projector `P` (idempotent, symmetric), `r = P x` and
/// `y = r / (σ + ε)`, so `∂L/∂x = P (g/(σ+ε) − (g·r) r / (T σ (σ+ε)²))`.
pub fn tn_chunk_backward<F: Real>(x: &[F], grad_out: &[F], t_len: usize, d: usize, eps: F) -> Vec<F> {
    let n = F::of(t_len as f64);
    let mut grad = vec![F::zero(); x.len()];
    let mut r = vec![F::zero(); t_len];
    let mut gr = vec![F::zero(); t_len];
    for col in 0..d {
        let fit = fit_strided(x, t_len, d, col);
        let mut ss = F::zero();
        let mut gdotr = F::zero();
        for t in 0..t_len {
            r[t] = x[t * d + col] - fit.at(t + 1);
            ss += r[t] * r[t];
            gdotr += grad_out[t * d + col] * r[t];
        }
        let sigma = (ss / n).sqrt();
        if sigma <= linear_floor(x, t_len, d, col) {
            continue;
        }
        let denom = sigma + eps;
        let coef = if sigma > F::zero() { gdotr / (n * sigma * denom * denom) } else { F::zero() };
        for t in 0..t_len {
            gr[t] = grad_out[t * d + col] / denom - coef * r[t];
        }
        let gfit = fit_strided(&gr, t_len, 1, 0);
        for t in 0..t_len {
            grad[t * d + col] = gr[t] - gfit.at(t + 1);
        }
    }
    grad
}

/// Streaming normalization state: fixed size, independent of stream length.
#[derive(Debug, Clone, PartialEq)]
pub struct TnState<F> {
    mu: Vec<F>,
    var: Vec<F>,
    alpha: F,
    eps: F,
    warm: u64,
}

fn check_alpha_eps(alpha: f64, eps: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    Ok(())
}

/// Starts a stream at its first sample: `μ₀ = x₁`, `σ₀² = 0`.
pub fn tn_flow_init<F: Real>(alpha: F, eps: F, x1: &[F]) -> Result<TnState<F>> {
    check_alpha_eps(alpha.f64(), eps.f64())?;
    Ok(TnState { mu: x1.to_vec(), var: vec![F::zero(); x1.len()], alpha, eps, warm: 0 })
}

impl<F: Real> TnState<F> {
    /// A state for `d` coordinates with zero trend and variance.
    pub fn zeros(alpha: F, eps: F, d: usize) -> Result<Self> {
        check_alpha_eps(alpha.f64(), eps.f64())?;
        Ok(Self { mu: vec![F::zero(); d], var: vec![F::zero(); d], alpha, eps, warm: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[F] {
        &self.mu
    }

    pub fn var(&self) -> &[F] {
        &self.var
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    pub fn eps(&self) -> F {
        self.eps
    }

    /// Frames processed so far.
    pub fn warm(&self) -> u64 {
        self.warm
    }

    /// Re-seeds the trend at `x1` and clears the variance.
    pub fn reset_to(&mut self, x1: &[F]) {
        self.mu.copy_from_slice(x1);
        self.var.iter_mut().for_each(|v| *v = F::zero());
        self.warm = 0;
    }

    /// Bytes held by the per-coordinate buffers.
    pub fn state_bytes(&self) -> usize {
        (self.mu.len() + self.var.len()) * std::mem::size_of::<F>()
    }

    /// One streaming step; writes `D` normalized values into `out`.
    pub fn step(&mut self, x: &[F], out: &mut [F]) {
        debug_assert_eq!(x.len(), self.mu.len());
        debug_assert_eq!(out.len(), self.mu.len());
        let a = self.alpha;
        let b = F::one() - a;
        for i in 0..x.len() {
            let mu = a * self.mu[i] + b * x[i];
            let r = x[i] - mu;
            let var = a * self.var[i] + b * r * r;
            self.mu[i] = mu;
            self.var[i] = var;
            out[i] = r / (var.sqrt() + self.eps);
        }
        self.warm += 1;
    }
}

/// Functional form of [`TnState::step`].
pub fn tn_flow_step<F: Real>(mut state: TnState<F>, x: &[F]) -> (TnState<F>, Vec<F>) {
    let mut out = vec![F::zero(); x.len()];
    state.step(x, &mut out);
    (state, out)
}
