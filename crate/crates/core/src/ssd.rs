//! Diagonal state-space model with two equivalent evaluation orders.
//!
//! The continuous system `h' = A h + B x`, `y = C h` with diagonal `A` is
//! discretized by zero-order hold into `h_t = Ā_t h_{t-1} + B̄_t x_t`,
//! `y_t = C_t h_t`. The step form ([`ssd_step`]) runs that recurrence one
//! frame at a time with a fixed-size [`SsdState`]. The chunk form
//! ([`ssd_chunk`]) evaluates whole segments through the lower-triangular
//! decay kernel `L_{ij} = Π_{k=j+1..i} Ā_k`, i.e. `Y = (L ∘ C B̄) X` plus the
//! decayed contribution of the incoming state, blockwise so memory stays
//! linear in `T`.
//!
//! Shapes: the state is `N×m` (`m` independent columns sharing one system),
//! each input step is `p×m` and each output step `q×m`, all row-major.
//! `B̄` is `N×p` and `C` is `q×N`.

use crate::error::{Error, Result};
use crate::real::Real;

/// Below this `|aΔt|` the ZOH input factor uses its series expansion.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

/// Default number of steps per kernel block in [`ssd_chunk`].
pub const DEFAULT_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm<F> {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Diagonal of `A`, every entry `<= 0`.
    pub a_diag: Vec<F>,
    /// `N×p`
    pub b: Vec<F>,
    /// `q×N`
    pub c: Vec<F>,
    pub dt: F,
}

impl<F: Real> ContinuousSsm<F> {
    pub fn new(a_diag: Vec<F>, b: Vec<F>, c: Vec<F>, p: usize, q: usize, dt: F) -> Result<Self> {
        let n = a_diag.len();
        let s = Self { n, p, q, a_diag, b, c, dt };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::shape("state, input and output dims must be >= 1"));
        }
        if self.b.len() != self.n * self.p || self.c.len() != self.q * self.n {
            return Err(Error::shape(format!(
                "B must be {}x{} and C {}x{}",
                self.n, self.p, self.q, self.n
            )));
        }
        if !(self.dt > F::zero() && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.a_diag.iter().any(|&a| !(a <= F::zero()) || !a.is_finite()) {
            return Err(Error::invalid("diagonal of A must be finite and <= 0"));
        }
        if self.b.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::numerical("B and C must be finite"));
        }
        Ok(())
    }
}

/// Zero-order-hold factors for one diagonal entry: `(Ā, φ)` with
/// `Ā = e^{aΔt}` and `B̄ = φ B`, `φ = ∫₀^Δt e^{aτ} dτ = (e^{aΔt} − 1)/a`.
pub fn zoh_factors<F: Real>(a: F, dt: F) -> (F, F) {
    let x = a * dt;
    let abar = x.exp();
    let phi = if x.abs() < F::of(ZOH_SERIES_THRESHOLD) {
        dt * (F::one() + x / F::of(2.0))
    } else {
        x.exp_m1() / a
    };
    (abar, phi)
}

/// `∂φ/∂a` for [`zoh_factors`], series-expanded near `aΔt = 0`.
pub fn zoh_phi_da<F: Real>(a: F, dt: F) -> F {
    let x = a * dt;
    let s = if x.abs() < F::of(1e-3) {
        // (x e^x − (e^x − 1)) / x² = 1/2 + x/3 + x²/8 + x³/30 + …
        F::of(0.5) + x / F::of(3.0) + x * x / F::of(8.0) + x * x * x / F::of(30.0)
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    };
    dt * dt * s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm<F> {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub abar: Vec<F>,
    pub bbar: Vec<F>,
    pub c: Vec<F>,
}

pub fn discretize_zoh<F: Real>(sys: &ContinuousSsm<F>) -> Result<DiscreteSsm<F>> {
    sys.validate()?;
    let mut abar = Vec::with_capacity(sys.n);
    let mut bbar = Vec::with_capacity(sys.n * sys.p);
    for (i, &a) in sys.a_diag.iter().enumerate() {
        let (ab, phi) = zoh_factors(a, sys.dt);
        abar.push(ab);
        bbar.extend(sys.b[i * sys.p..(i + 1) * sys.p].iter().map(|&b| phi * b));
    }
    if abar.iter().chain(&bbar).any(|v| !v.is_finite()) {
        return Err(Error::numerical("discretization produced non-finite values"));
    }
    Ok(DiscreteSsm { n: sys.n, p: sys.p, q: sys.q, abar, bbar, c: sys.c.clone() })
}

/// Per-step discrete parameters: constant for LTI systems, one set per step
/// for selective ones.
pub trait Schedule<F> {
    /// `(N, p, q)`
    fn dims(&self) -> (usize, usize, usize);
    /// Number of steps covered, `None` if time-invariant.
    fn steps(&self) -> Option<usize>;
    fn abar(&self, t: usize) -> &[F];
    fn bbar(&self, t: usize) -> &[F];
    fn c(&self, t: usize) -> &[F];
}

impl<F> Schedule<F> for DiscreteSsm<F> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.q)
    }
    fn steps(&self) -> Option<usize> {
        None
    }
    fn abar(&self, _t: usize) -> &[F] {
        &self.abar
    }
    fn bbar(&self, _t: usize) -> &[F] {
        &self.bbar
    }
    fn c(&self, _t: usize) -> &[F] {
        &self.c
    }
}

/// Input-dependent (selective) discrete parameters for `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveSeq<F> {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub t: usize,
    /// `T×N`
    pub abar: Vec<F>,
    /// `T×N×p`
    pub bbar: Vec<F>,
    /// `T×q×N`
    pub c: Vec<F>,
}

impl<F: Real> SelectiveSeq<F> {
    pub fn new(n: usize, p: usize, q: usize, abar: Vec<F>, bbar: Vec<F>, c: Vec<F>) -> Result<Self> {
        if n == 0 || p == 0 || q == 0 || abar.len() % n != 0 {
            return Err(Error::shape("selective sequence dims"));
        }
        let t = abar.len() / n;
        if bbar.len() != t * n * p || c.len() != t * q * n {
            return Err(Error::shape(format!(
                "selective sequence of {t} steps needs {} B̄ and {} C values",
                t * n * p,
                t * q * n
            )));
        }
        Ok(Self { n, p, q, t, abar, bbar, c })
    }

    /// Discretizes per-step `Δt_t`, `B_t` (`N×p`) and `C_t` (`q×N`) against a
    /// shared diagonal `A`.
    pub fn from_continuous(a_diag: &[F], dt: &[F], b: &[F], c: &[F], p: usize, q: usize) -> Result<Self> {
        let n = a_diag.len();
        let t = dt.len();
        if b.len() != t * n * p || c.len() != t * q * n {
            return Err(Error::shape("per-step B or C has the wrong length"));
        }
        if a_diag.iter().any(|&a| !(a <= F::zero())) {
            return Err(Error::invalid("diagonal of A must be <= 0"));
        }
        let mut abar = Vec::with_capacity(t * n);
        let mut bbar = Vec::with_capacity(t * n * p);
        for (step, &d) in dt.iter().enumerate() {
            if !(d > F::zero()) {
                return Err(Error::invalid(format!("dt[{step}] must be > 0")));
            }
            for (i, &a) in a_diag.iter().enumerate() {
                let (ab, phi) = zoh_factors(a, d);
                abar.push(ab);
                let row = &b[(step * n + i) * p..(step * n + i + 1) * p];
                bbar.extend(row.iter().map(|&v| phi * v));
            }
        }
        Self::new(n, p, q, abar, bbar, c.to_vec())
    }

    /// A time-invariant system repeated for `t` steps.
    pub fn repeat(sys: &DiscreteSsm<F>, t: usize) -> Self {
        Self {
            n: sys.n,
            p: sys.p,
            q: sys.q,
            t,
            abar: sys.abar.repeat(t),
            bbar: sys.bbar.repeat(t),
            c: sys.c.repeat(t),
        }
    }

    /// Steps `start..start + len`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.t {
            return Err(Error::shape("segment out of range"));
        }
        let (n, p, q) = (self.n, self.p, self.q);
        Ok(Self {
            n,
            p,
            q,
            t: len,
            abar: self.abar[start * n..(start + len) * n].to_vec(),
            bbar: self.bbar[start * n * p..(start + len) * n * p].to_vec(),
            c: self.c[start * q * n..(start + len) * q * n].to_vec(),
        })
    }
}

impl<F> Schedule<F> for SelectiveSeq<F> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.q)
    }
    fn steps(&self) -> Option<usize> {
        Some(self.t)
    }
    fn abar(&self, t: usize) -> &[F] {
        &self.abar[t * self.n..(t + 1) * self.n]
    }
    fn bbar(&self, t: usize) -> &[F] {
        let k = self.n * self.p;
        &self.bbar[t * k..(t + 1) * k]
    }
    fn c(&self, t: usize) -> &[F] {
        let k = self.q * self.n;
        &self.c[t * k..(t + 1) * k]
    }
}

/// Hidden state `h` (`N×m`). Its size never depends on how many steps ran.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdState<F> {
    n: usize,
    m: usize,
    h: Vec<F>,
}

impl<F: Real> SsdState<F> {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { n, m, h: vec![F::zero(); n * m] }
    }

    pub fn from_vec(n: usize, m: usize, h: Vec<F>) -> Result<Self> {
        if h.len() != n * m {
            return Err(Error::shape(format!("state needs {} values, got {}", n * m, h.len())));
        }
        Ok(Self { n, m, h })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> &[F] {
        &self.h
    }

    pub(crate) fn h_mut(&mut self) -> &mut [F] {
        &mut self.h
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = F::zero());
    }

    pub fn state_bytes(&self) -> usize {
        self.h.len() * std::mem::size_of::<F>()
    }
}

fn check_state<F: Real>(dims: (usize, usize, usize), state: &SsdState<F>) -> Result<()> {
    if state.n != dims.0 {
        return Err(Error::shape(format!("state has N={} but system has N={}", state.n, dims.0)));
    }
    Ok(())
}

/// One recurrence step at schedule index `t`:
/// `h ← diag(Ā_t) h + B̄_t x`, `y = C_t h`. `x` is `p×m`, `y` is `q×m`.
pub fn ssd_step<F: Real, S: Schedule<F> + ?Sized>(
    sched: &S,
    t: usize,
    state: &mut SsdState<F>,
    x: &[F],
    y: &mut [F],
) -> Result<()> {
    let (n, p, q) = sched.dims();
    check_state((n, p, q), state)?;
    let m = state.m;
    if x.len() != p * m || y.len() != q * m {
        return Err(Error::shape(format!(
            "step expects x {p}x{m} and y {q}x{m}, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    step_raw(sched.abar(t), sched.bbar(t), sched.c(t), n, p, q, m, &mut state.h, x, y);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn step_raw<F: Real>(
    abar: &[F],
    bbar: &[F],
    c: &[F],
    n: usize,
    p: usize,
    q: usize,
    m: usize,
    h: &mut [F],
    x: &[F],
    y: &mut [F],
) {
    for i in 0..n {
        let a = abar[i];
        let hrow = &mut h[i * m..(i + 1) * m];
        for v in hrow.iter_mut() {
            *v *= a;
        }
        for k in 0..p {
            let b = bbar[i * p + k];
            let xrow = &x[k * m..(k + 1) * m];
            for (hv, &xv) in hrow.iter_mut().zip(xrow) {
                *hv += b * xv;
            }
        }
    }
    for r in 0..q {
        let yrow = &mut y[r * m..(r + 1) * m];
        yrow.iter_mut().for_each(|v| *v = F::zero());
        for i in 0..n {
            let cv = c[r * n + i];
            let hrow = &h[i * m..(i + 1) * m];
            for (yv, &hv) in yrow.iter_mut().zip(hrow) {
                *yv += cv * hv;
            }
        }
    }
}

/// Lower-triangular decay kernel, one `T×T` matrix per state channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalKernel<F> {
    t: usize,
    n: usize,
    /// `(i·T + j)·N + channel`
    l: Vec<F>,
}

impl<F: Real> CausalKernel<F> {
    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn channels(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, channel: usize) -> F {
        self.l[(i * self.t + j) * self.n + channel]
    }

    fn row(&self, i: usize, j: usize) -> &[F] {
        let base = (i * self.t + j) * self.n;
        &self.l[base..base + self.n]
    }
}

/// `L_{ij} = Π_{k=j+1..i} Ā_k` for `i >= j` (empty product 1), zero above the
/// diagonal. `abar_seq` is `T×N`.
pub fn build_kernel<F: Real>(abar_seq: &[F], t: usize, n: usize) -> Result<CausalKernel<F>> {
    if t == 0 || n == 0 || abar_seq.len() != t * n {
        return Err(Error::shape(format!("kernel needs {t}x{n} decay values, got {}", abar_seq.len())));
    }
    let mut l = vec![F::zero(); t * t * n];
    for i in 0..t {
        let diag = (i * t + i) * n;
        l[diag..diag + n].iter_mut().for_each(|v| *v = F::one());
        let a = &abar_seq[i * n..(i + 1) * n];
        for j in 0..i {
            let prev = ((i - 1) * t + j) * n;
            let cur = (i * t + j) * n;
            for ch in 0..n {
                l[cur + ch] = l[prev + ch] * a[ch];
            }
        }
    }
    Ok(CausalKernel { t, n, l })
}

/// Time-invariant kernel `L_{ij} = Ā^{i−j}`.
pub fn build_kernel_lti<F: Real>(abar: &[F], t: usize) -> Result<CausalKernel<F>> {
    build_kernel(&abar.repeat(t), t, abar.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkOptions {
    /// Steps per kernel block; the kernel for one block is `block²·N` values.
    pub block: usize,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self { block: DEFAULT_BLOCK }
    }
}

/// Chunk (parallel) form over `t_len` steps starting at schedule index 0.
///
/// `x` is `T×p×m`; returns `Y` (`T×q×m`) and leaves `h_T` in `state`.
pub fn ssd_chunk<F: Real, S: Schedule<F> + ?Sized>(
    sched: &S,
    x: &[F],
    t_len: usize,
    state: &mut SsdState<F>,
) -> Result<Vec<F>> {
    ssd_chunk_with(sched, x, t_len, state, ChunkOptions::default())
}

pub fn ssd_chunk_with<F: Real, S: Schedule<F> + ?Sized>(
    sched: &S,
    x: &[F],
    t_len: usize,
    state: &mut SsdState<F>,
    opts: ChunkOptions,
) -> Result<Vec<F>> {
    let (n, p, q) = sched.dims();
    check_state((n, p, q), state)?;
    let m = state.m;
    if x.len() != t_len * p * m {
        return Err(Error::shape(format!(
            "chunk expects x of {t_len}x{p}x{m} = {} values, got {}",
            t_len * p * m,
            x.len()
        )));
    }
    if let Some(steps) = sched.steps() {
        if steps < t_len {
            return Err(Error::shape(format!("schedule covers {steps} steps, need {t_len}")));
        }
    }
    let mut y = vec![F::zero(); t_len * q * m];
    let block = opts.block.max(1);
    let mut abar_blk: Vec<F> = Vec::with_capacity(block * n);
    let mut g = vec![F::zero(); q * p];
    let mut dec_h = vec![F::zero(); n * m];
    let mut start = 0;
    while start < t_len {
        let len = block.min(t_len - start);
        abar_blk.clear();
        for s in start..start + len {
            abar_blk.extend_from_slice(sched.abar(s));
        }
        let kernel = build_kernel(&abar_blk, len, n)?;
        let a0 = sched.abar(start);

        for i in 0..len {
            let ti = start + i;
            let ci = sched.c(ti);
            let yi = &mut y[ti * q * m..(ti + 1) * q * m];
            // Incoming state decayed to step i: Π_{k=0..i} Ā_k ∘ h_prev.
            let dec = kernel.row(i, 0);
            for ch in 0..n {
                let f = dec[ch] * a0[ch];
                for c in 0..m {
                    dec_h[ch * m + c] = f * state.h[ch * m + c];
                }
            }
            for r in 0..q {
                for ch in 0..n {
                    let cv = ci[r * n + ch];
                    for c in 0..m {
                        yi[r * m + c] += cv * dec_h[ch * m + c];
                    }
                }
            }
            // Intra-block attention: G_ij = C_i diag(L_ij) B̄_j.
            for j in 0..=i {
                let tj = start + j;
                let lij = kernel.row(i, j);
                let bj = sched.bbar(tj);
                for r in 0..q {
                    for k in 0..p {
                        let mut acc = F::zero();
                        for ch in 0..n {
                            acc += ci[r * n + ch] * lij[ch] * bj[ch * p + k];
                        }
                        g[r * p + k] = acc;
                    }
                }
                let xj = &x[tj * p * m..(tj + 1) * p * m];
                for r in 0..q {
                    for k in 0..p {
                        let gv = g[r * p + k];
                        if gv == F::zero() {
                            continue;
                        }
                        let yrow = &mut yi[r * m..(r + 1) * m];
                        for (yv, &xv) in yrow.iter_mut().zip(&xj[k * m..(k + 1) * m]) {
                            *yv += gv * xv;
                        }
                    }
                }
            }
        }

        // Carry h to the end of the block.
        let last = len - 1;
        let dec = kernel.row(last, 0);
        for ch in 0..n {
            let f = dec[ch] * a0[ch];
            for c in 0..m {
                state.h[ch * m + c] *= f;
            }
        }
        for j in 0..len {
            let tj = start + j;
            let lj = kernel.row(last, j);
            let bj = sched.bbar(tj);
            let xj = &x[tj * p * m..(tj + 1) * p * m];
            for ch in 0..n {
                for k in 0..p {
                    let w = lj[ch] * bj[ch * p + k];
                    if w == F::zero() {
                        continue;
                    }
                    let hrow = &mut state.h[ch * m..(ch + 1) * m];
                    for (hv, &xv) in hrow.iter_mut().zip(&xj[k * m..(k + 1) * m]) {
                        *hv += w * xv;
                    }
                }
            }
        }
        start += len;
    }
    Ok(y)
}

/// Gradients of a scalar loss through [`ssd_chunk`] given `∂L/∂Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdGrads<F> {
    /// `T×p×m`
    pub x: Vec<F>,
    /// `T×N`
    pub abar: Vec<F>,
    /// `T×N×p`
    pub bbar: Vec<F>,
    /// `T×q×N`
    pub c: Vec<F>,
    /// `N×m`
    pub h0: Vec<F>,
}

/// Reverse-mode pass for a selective sequence starting from `h0`.
///
/// Hidden states are recomputed forward (`T×N×m` values) and the adjoint
/// `∂L/∂h_t` is swept backwards through the transposed recurrence.
pub fn ssd_backward<F: Real>(
    seq: &SelectiveSeq<F>,
    x: &[F],
    h0: &SsdState<F>,
    grad_y: &[F],
) -> Result<SsdGrads<F>> {
    let (n, p, q, t_len) = (seq.n, seq.p, seq.q, seq.t);
    check_state((n, p, q), h0)?;
    let m = h0.m;
    if x.len() != t_len * p * m || grad_y.len() != t_len * q * m {
        return Err(Error::shape("backward: x or grad_y has the wrong length"));
    }
    let nm = n * m;
    let mut hs = vec![F::zero(); (t_len + 1) * nm];
    hs[..nm].copy_from_slice(&h0.h);
    let mut ybuf = vec![F::zero(); q * m];
    for t in 0..t_len {
        let (prev, cur) = hs.split_at_mut((t + 1) * nm);
        let h = &mut cur[..nm];
        h.copy_from_slice(&prev[t * nm..]);
        step_raw(seq.abar(t), seq.bbar(t), seq.c(t), n, p, q, m, h, &x[t * p * m..(t + 1) * p * m], &mut ybuf);
    }

    let mut gx = vec![F::zero(); x.len()];
    let mut gabar = vec![F::zero(); t_len * n];
    let mut gbbar = vec![F::zero(); t_len * n * p];
    let mut gc = vec![F::zero(); t_len * q * n];
    let mut gh = vec![F::zero(); nm];
    for t in (0..t_len).rev() {
        let h_t = &hs[(t + 1) * nm..(t + 2) * nm];
        let h_prev = &hs[t * nm..(t + 1) * nm];
        let gy = &grad_y[t * q * m..(t + 1) * q * m];
        let ct = seq.c(t);
        for r in 0..q {
            for ch in 0..n {
                let mut acc = F::zero();
                let cv = ct[r * n + ch];
                for c in 0..m {
                    acc += gy[r * m + c] * h_t[ch * m + c];
                    gh[ch * m + c] += cv * gy[r * m + c];
                }
                gc[(t * q + r) * n + ch] = acc;
            }
        }
        let bt = seq.bbar(t);
        let xt = &x[t * p * m..(t + 1) * p * m];
        let gxt = &mut gx[t * p * m..(t + 1) * p * m];
        for ch in 0..n {
            let ghr = &gh[ch * m..(ch + 1) * m];
            for k in 0..p {
                let mut acc = F::zero();
                let b = bt[ch * p + k];
                for c in 0..m {
                    acc += ghr[c] * xt[k * m + c];
                    gxt[k * m + c] += b * ghr[c];
                }
                gbbar[(t * n + ch) * p + k] = acc;
            }
            let mut acc = F::zero();
            for c in 0..m {
                acc += ghr[c] * h_prev[ch * m + c];
            }
            gabar[t * n + ch] = acc;
        }
        let at = seq.abar(t);
        for ch in 0..n {
            for c in 0..m {
                gh[ch * m + c] *= at[ch];
            }
        }
    }
    Ok(SsdGrads { x: gx, abar: gabar, bbar: gbbar, c: gc, h0: gh })
}

/// `ln(1 + eˣ)`, floored at the smallest positive normal so a step size
/// built from it is never zero.
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::of(20.0) {
        x
    } else {
        x.exp().ln_1p().max(F::min_positive_value())
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Input-dependent step size and projections shared across all `m` columns
/// of a block (`p = q = 1` per column).
///
/// `Δt = softplus(w_dt·u + b_dt)`, `B = W_B u + b_B`, `C = W_C u + b_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveProjection<F> {
    pub d: usize,
    pub n: usize,
    /// `D`
    pub w_dt: Vec<F>,
    pub b_dt: F,
    /// `N×D`
    pub w_b: Vec<F>,
    /// `N`
    pub b_b: Vec<F>,
    /// `N×D`
    pub w_c: Vec<F>,
    /// `N`
    pub b_c: Vec<F>,
}

impl<F: Real> SelectiveProjection<F> {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            d,
            n,
            w_dt: vec![F::zero(); d],
            b_dt: F::zero(),
            w_b: vec![F::zero(); n * d],
            b_b: vec![F::zero(); n],
            w_c: vec![F::zero(); n * d],
            b_c: vec![F::zero(); n],
        }
    }

    /// Writes `B_t` and `C_t` into the given buffers and returns
    /// `(Δt_t, pre-softplus activation)`.
    pub fn project_into(&self, u: &[F], b: &mut [F], c: &mut [F]) -> (F, F) {
        let s = dot(&self.w_dt, u) + self.b_dt;
        for i in 0..self.n {
            b[i] = dot(&self.w_b[i * self.d..(i + 1) * self.d], u) + self.b_b[i];
            c[i] = dot(&self.w_c[i * self.d..(i + 1) * self.d], u) + self.b_c[i];
        }
        (softplus(s), s)
    }

    pub fn project(&self, u: &[F]) -> (F, Vec<F>, Vec<F>) {
        let mut b = vec![F::zero(); self.n];
        let mut c = vec![F::zero(); self.n];
        let (dt, _) = self.project_into(u, &mut b, &mut c);
        (dt, b, c)
    }
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}
