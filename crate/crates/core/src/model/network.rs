use crate::data::{BvpSignal, FrameTensor};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::ssd::{self, sigmoid, softplus, zoh_factors, zoh_phi_da, SelectiveSeq, SsdState};
use crate::tn::{self, TnState};

use super::layers::{
    avg_pool2, avg_pool2_backward, conv3x3, conv3x3_backward, global_avg_pool, linear,
    linear_backward, matvec, silu, silu_grad,
};
use super::{BlockParams, ModelConfig, ModelParams};

fn check_frame_dims(cfg: &ModelConfig, h: usize, w: usize, c: usize) -> Result<()> {
    if (h, w, c) != (cfg.input_h, cfg.input_w, cfg.in_channels) {
        return Err(Error::shape(format!(
            "model expects {}x{}x{} frames, got {h}x{w}x{c}",
            cfg.input_h, cfg.input_w, cfg.in_channels
        )));
    }
    Ok(())
}

/// Reusable buffers for encoding one frame.
#[derive(Debug, Clone)]
struct EncoderWork<F> {
    act: Vec<F>,
    pre: Vec<F>,
    gap: Vec<F>,
}

impl<F: Real> EncoderWork<F> {
    fn new(cfg: &ModelConfig) -> Self {
        let (mut h, mut w, mut cin) = (cfg.input_h, cfg.input_w, cfg.in_channels);
        let mut act = h * w * cin;
        let mut pre = 0;
        for &cout in &cfg.encoder_channels {
            pre = pre.max(h * w * cout);
            h /= 2;
            w /= 2;
            act = act.max(h * w * cout);
            cin = cout;
        }
        Self { act: vec![F::zero(); act], pre: vec![F::zero(); pre], gap: vec![F::zero(); cin] }
    }

    fn bytes(&self) -> usize {
        (self.act.len() + self.pre.len() + self.gap.len()) * std::mem::size_of::<F>()
    }
}

/// Encodes one `H×W×C` frame into `D` features.
fn encode_frame<F: Real>(params: &ModelParams<F>, frame: &[f32], work: &mut EncoderWork<F>, out: &mut [F]) {
    let cfg = &params.config;
    let (mut h, mut w) = (cfg.input_h, cfg.input_w);
    for (a, &v) in work.act.iter_mut().zip(frame) {
        *a = F::of(v as f64);
    }
    for conv in &params.encoder {
        let n_in = h * w * conv.cin;
        let n_pre = h * w * conv.cout;
        let pre = &mut work.pre[..n_pre];
        conv3x3(&work.act[..n_in], h, w, conv.cin, &conv.weight.data, &conv.bias.data, conv.cout, pre);
        pre.iter_mut().for_each(|v| *v = silu(*v));
        let n_out = (h / 2) * (w / 2) * conv.cout;
        avg_pool2(pre, h, w, conv.cout, &mut work.act[..n_out]);
        h /= 2;
        w /= 2;
    }
    let c = work.gap.len();
    global_avg_pool(&work.act[..h * w * c], h * w, c, &mut work.gap);
    linear(&params.proj.weight.data, &params.proj.bias.data, &work.gap, out);
}

/// Per-frame encoder features, `T×D` row-major. No temporal mixing happens
/// here, so each row depends on its own frame only.
pub fn encode_frames<F: Real>(params: &ModelParams<F>, frames: &FrameTensor) -> Result<Vec<F>> {
    let [t, h, w, c] = frames.dims();
    check_frame_dims(&params.config, h, w, c)?;
    let d = params.config.feature_dim;
    let mut work = EncoderWork::new(&params.config);
    let mut feats = vec![F::zero(); t * d];
    for (i, row) in feats.chunks_exact_mut(d).enumerate() {
        encode_frame(params, frames.frame(i), &mut work, row);
    }
    Ok(feats)
}

/// Per-step selective parameters `(Δt, B, C)` and the pre-softplus
/// activation for each row of `z` (`T×D`).
fn project_seq<F: Real>(blk: &BlockParams<F>, z: &[F], t_len: usize, d: usize) -> (Vec<F>, Vec<F>, Vec<F>, Vec<F>) {
    let n = blk.a_log.len();
    let mut s = vec![F::zero(); t_len];
    let mut b = vec![F::zero(); t_len * n];
    let mut c = vec![F::zero(); t_len * n];
    for t in 0..t_len {
        let zt = &z[t * d..(t + 1) * d];
        project_step(blk, zt, &mut s[t], &mut b[t * n..(t + 1) * n], &mut c[t * n..(t + 1) * n]);
    }
    let dt = s.iter().map(|&v| softplus(v)).collect();
    (s, dt, b, c)
}

#[inline]
fn project_step<F: Real>(blk: &BlockParams<F>, z: &[F], s: &mut F, b: &mut [F], c: &mut [F]) {
    *s = blk.dt_bias.data[0];
    if let Some(w) = &blk.dt_weight {
        *s += ssd::dot(&w.data, z);
    }
    match (&blk.b_weight, &blk.c_weight) {
        (Some(wb), Some(wc)) => {
            linear(&wb.data, &blk.b_bias.data, z, b);
            linear(&wc.data, &blk.c_bias.data, z, c);
        }
        _ => {
            b.copy_from_slice(&blk.b_bias.data);
            c.copy_from_slice(&blk.c_bias.data);
        }
    }
}

/// Intermediate values of one temporal block over a chunk.
#[derive(Debug, Clone)]
struct BlockCache<F> {
    u: Vec<F>,
    z: Vec<F>,
    x: Vec<F>,
    s: Vec<F>,
    dt: Vec<F>,
    b: Vec<F>,
    seq: SelectiveSeq<F>,
    /// `SSD(x) + d ∘ x`
    y: Vec<F>,
}

fn block_chunk<F: Real>(blk: &BlockParams<F>, cfg: &ModelConfig, u: Vec<F>, t_len: usize) -> Result<(Vec<F>, BlockCache<F>)> {
    let d = cfg.feature_dim;
    let n = cfg.state_dim;
    let z = if cfg.tn_identity { u.clone() } else { tn::tn_chunk(&u, t_len, d, F::of(cfg.tn_eps))? };
    let mut x = vec![F::zero(); t_len * d];
    for (xt, zt) in x.chunks_exact_mut(d).zip(z.chunks_exact(d)) {
        matvec(&blk.in_proj.data, zt, xt);
    }
    let (s, dt, b, c) = project_seq(blk, &z, t_len, d);
    let a: Vec<F> = blk.a_diag().collect();
    let mut abar = Vec::with_capacity(t_len * n);
    let mut bbar = Vec::with_capacity(t_len * n);
    for t in 0..t_len {
        for i in 0..n {
            let (ab, phi) = zoh_factors(a[i], dt[t]);
            abar.push(ab);
            bbar.push(phi * b[t * n + i]);
        }
    }
    let seq = SelectiveSeq::new(n, 1, 1, abar, bbar, c)?;
    let mut h = SsdState::zeros(n, d);
    let mut y = ssd::ssd_chunk(&seq, &x, t_len, &mut h)?;
    for (yt, xt) in y.chunks_exact_mut(d).zip(x.chunks_exact(d)) {
        for ((yv, &xv), &dv) in yt.iter_mut().zip(xt).zip(&blk.d_skip.data) {
            *yv += dv * xv;
        }
    }
    let mut v = z.clone();
    let mut tmp = vec![F::zero(); d];
    for (vt, yt) in v.chunks_exact_mut(d).zip(y.chunks_exact(d)) {
        linear(&blk.out_proj.weight.data, &blk.out_proj.bias.data, yt, &mut tmp);
        for (vv, &o) in vt.iter_mut().zip(&tmp) {
            *vv += o;
        }
    }
    Ok((v, BlockCache { u, z, x, s, dt, b, seq, y }))
}

fn head_chunk<F: Real>(params: &ModelParams<F>, v: &[F], t_len: usize) -> Vec<F> {
    let d = params.config.feature_dim;
    let mut out = vec![F::zero(); t_len];
    for (o, vt) in out.iter_mut().zip(v.chunks_exact(d)) {
        linear(&params.head.weight.data, &params.head.bias.data, vt, std::slice::from_mut(o));
    }
    out
}

/// Chunk-mode forward pass; one output per frame.
pub fn forward_chunk_values<F: Real>(params: &ModelParams<F>, frames: &FrameTensor) -> Result<Vec<F>> {
    let t_len = frames.frames();
    if t_len < 2 {
        return Err(Error::invalid(format!("chunk forward needs T >= 2, got {t_len}")));
    }
    let mut v = encode_frames(params, frames)?;
    for blk in &params.blocks {
        v = block_chunk(blk, &params.config, v, t_len)?.0;
    }
    let out = head_chunk(params, &v, t_len);
    if out.iter().any(|o| !o.is_finite()) {
        return Err(Error::numerical("model output is not finite"));
    }
    Ok(out)
}

/// Chunk-mode forward pass as a BVP signal at the frames' rate.
pub fn forward_chunk<F: Real>(params: &ModelParams<F>, frames: &FrameTensor) -> Result<BvpSignal> {
    let out = forward_chunk_values(params, frames)?;
    BvpSignal::new(out.iter().map(|v| v.f64()).collect(), frames.fps())
}

/// Everything [`backward`] needs from a chunk forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    t: usize,
    /// Per stage, `T` stage inputs followed by `T` conv pre-activations.
    stage_in: Vec<Vec<F>>,
    stage_pre: Vec<Vec<F>>,
    /// `T×C_last`
    gap: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    /// Input to the head, `T×D`.
    v: Vec<F>,
    pub output: Vec<F>,
}

impl<F: Real> ForwardCache<F> {
    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }
}

/// Chunk forward pass that keeps the activations for [`backward`].
pub fn forward_train<F: Real>(params: &ModelParams<F>, frames: &FrameTensor) -> Result<ForwardCache<F>> {
    let cfg = &params.config;
    let [t_len, h0, w0, c0] = frames.dims();
    check_frame_dims(cfg, h0, w0, c0)?;
    if t_len < 2 {
        return Err(Error::invalid(format!("chunk forward needs T >= 2, got {t_len}")));
    }
    let d = cfg.feature_dim;
    let mut stage_in = Vec::with_capacity(params.encoder.len());
    let mut stage_pre = Vec::with_capacity(params.encoder.len());
    let mut act: Vec<F> = frames.data().iter().map(|&v| F::of(v as f64)).collect();
    let (mut h, mut w) = (h0, w0);
    for conv in &params.encoder {
        let n_in = h * w * conv.cin;
        let n_pre = h * w * conv.cout;
        let n_out = (h / 2) * (w / 2) * conv.cout;
        let mut pre = vec![F::zero(); t_len * n_pre];
        let mut next = vec![F::zero(); t_len * n_out];
        let mut buf = vec![F::zero(); n_pre];
        for t in 0..t_len {
            let p = &mut pre[t * n_pre..(t + 1) * n_pre];
            conv3x3(&act[t * n_in..(t + 1) * n_in], h, w, conv.cin, &conv.weight.data, &conv.bias.data, conv.cout, p);
            for (b, &pv) in buf.iter_mut().zip(p.iter()) {
                *b = silu(pv);
            }
            avg_pool2(&buf, h, w, conv.cout, &mut next[t * n_out..(t + 1) * n_out]);
        }
        stage_in.push(std::mem::replace(&mut act, next));
        stage_pre.push(pre);
        h /= 2;
        w /= 2;
    }
    let c_last = params.proj.din;
    let mut gap = vec![F::zero(); t_len * c_last];
    let mut u = vec![F::zero(); t_len * d];
    for t in 0..t_len {
        let g = &mut gap[t * c_last..(t + 1) * c_last];
        global_avg_pool(&act[t * h * w * c_last..(t + 1) * h * w * c_last], h * w, c_last, g);
        linear(&params.proj.weight.data, &params.proj.bias.data, g, &mut u[t * d..(t + 1) * d]);
    }
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut v = u;
    for blk in &params.blocks {
        let (next, cache) = block_chunk(blk, cfg, v, t_len)?;
        blocks.push(cache);
        v = next;
    }
    let output = head_chunk(params, &v, t_len);
    Ok(ForwardCache { t: t_len, stage_in, stage_pre, gap, blocks, v, output })
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn block_backward<F: Real>(
    blk: &BlockParams<F>,
    g: &mut BlockParams<F>,
    cfg: &ModelConfig,
    cache: &BlockCache<F>,
    grad_v: &[F],
    t_len: usize,
) -> Result<Vec<F>> {
    let d = cfg.feature_dim;
    let n = cfg.state_dim;
    // v = z + W_o y + b_o
    let mut gz = grad_v.to_vec();
    let mut gy = vec![F::zero(); t_len * d];
    for t in 0..t_len {
        let r = t * d..(t + 1) * d;
        linear_backward(
            &blk.out_proj.weight.data,
            &cache.y[r.clone()],
            &grad_v[r.clone()],
            &mut g.out_proj.weight.data,
            Some(&mut g.out_proj.bias.data),
            Some(&mut gy[r]),
        );
    }
    // y = SSD(x) + d ∘ x
    let mut gx = vec![F::zero(); t_len * d];
    for t in 0..t_len {
        for k in 0..d {
            let gyv = gy[t * d + k];
            g.d_skip.data[k] += gyv * cache.x[t * d + k];
            gx[t * d + k] += gyv * blk.d_skip.data[k];
        }
    }
    let sg = ssd::ssd_backward(&cache.seq, &cache.x, &SsdState::zeros(n, d), &gy)?;
    add_into(&mut gx, &sg.x);

    // Discretization: Ā = e^{aΔt}, B̄ = φ(a, Δt) B.
    let a: Vec<F> = blk.a_diag().collect();
    let mut gb = vec![F::zero(); t_len * n];
    let mut gs = vec![F::zero(); t_len];
    let mut ga = vec![F::zero(); n];
    for t in 0..t_len {
        let dt = cache.dt[t];
        let mut gdt = F::zero();
        for i in 0..n {
            let k = t * n + i;
            let abar = cache.seq.abar[k];
            let (_, phi) = zoh_factors(a[i], dt);
            gb[k] = sg.bbar[k] * phi;
            let gphi = sg.bbar[k] * cache.b[k];
            gdt += sg.abar[k] * a[i] * abar + gphi * abar;
            ga[i] += sg.abar[k] * dt * abar + gphi * zoh_phi_da(a[i], dt);
        }
        gs[t] = gdt * sigmoid(cache.s[t]);
    }
    for i in 0..n {
        g.a_log.data[i] += ga[i] * a[i];
    }
    let gc = &sg.c;
    for t in 0..t_len {
        g.dt_bias.data[0] += gs[t];
    }
    match (&blk.dt_weight, &blk.b_weight, &blk.c_weight) {
        (Some(wdt), Some(wb), Some(wc)) => {
            let gwdt = g.dt_weight.as_mut().expect("gradient mirrors params");
            for t in 0..t_len {
                let zt = &cache.z[t * d..(t + 1) * d];
                let gzt = &mut gz[t * d..(t + 1) * d];
                for k in 0..d {
                    gwdt.data[k] += gs[t] * zt[k];
                    gzt[k] += gs[t] * wdt.data[k];
                }
            }
            let gwb = g.b_weight.as_mut().expect("gradient mirrors params");
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                linear_backward(&wb.data, &cache.z[r.clone()], &gb[t * n..(t + 1) * n], &mut gwb.data, Some(&mut g.b_bias.data), Some(&mut gz[r]));
            }
            let gwc = g.c_weight.as_mut().expect("gradient mirrors params");
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                linear_backward(&wc.data, &cache.z[r.clone()], &gc[t * n..(t + 1) * n], &mut gwc.data, Some(&mut g.c_bias.data), Some(&mut gz[r]));
            }
        }
        _ => {
            for t in 0..t_len {
                add_into(&mut g.b_bias.data, &gb[t * n..(t + 1) * n]);
                add_into(&mut g.c_bias.data, &gc[t * n..(t + 1) * n]);
            }
        }
    }
    // x = W_x z + b_x
    for t in 0..t_len {
        let r = t * d..(t + 1) * d;
        linear_backward(
            &blk.in_proj.data,
            &cache.z[r.clone()],
            &gx[r.clone()],
            &mut g.in_proj.data,
            None,
            Some(&mut gz[r]),
        );
    }
    if cfg.tn_identity {
        Ok(gz)
    } else {
        Ok(tn::tn_chunk_backward(&cache.u, &gz, t_len, d, F::of(cfg.tn_eps)))
    }
}

/// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` (length `T`).
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    cache: &ForwardCache<F>,
    grad_out: &[F],
    grads: &mut ModelParams<F>,
) -> Result<()> {
    let cfg = &params.config;
    let t_len = cache.t;
    if grad_out.len() != t_len {
        return Err(Error::shape(format!("output gradient has {} values, need {t_len}", grad_out.len())));
    }
    let d = cfg.feature_dim;
    let mut gv = vec![F::zero(); t_len * d];
    for t in 0..t_len {
        let r = t * d..(t + 1) * d;
        linear_backward(
            &params.head.weight.data,
            &cache.v[r.clone()],
            &grad_out[t..t + 1],
            &mut grads.head.weight.data,
            Some(&mut grads.head.bias.data),
            Some(&mut gv[r]),
        );
    }
    for (i, blk) in params.blocks.iter().enumerate().rev() {
        gv = block_backward(blk, &mut grads.blocks[i], cfg, &cache.blocks[i], &gv, t_len)?;
    }

    let c_last = params.proj.din;
    let n_stages = params.encoder.len();
    let (hl, wl) = (cfg.input_h >> n_stages, cfg.input_w >> n_stages);
    let hw = hl * wl;
    let mut ggap = vec![F::zero(); c_last];
    // Gradient flowing into the current stage's pooled output, per frame.
    let mut gact = vec![F::zero(); t_len * hw * c_last];
    for t in 0..t_len {
        ggap.iter_mut().for_each(|v| *v = F::zero());
        linear_backward(
            &params.proj.weight.data,
            &cache.gap[t * c_last..(t + 1) * c_last],
            &gv[t * d..(t + 1) * d],
            &mut grads.proj.weight.data,
            Some(&mut grads.proj.bias.data),
            Some(&mut ggap),
        );
        let inv = F::one() / F::of(hw as f64);
        for px in gact[t * hw * c_last..(t + 1) * hw * c_last].chunks_exact_mut(c_last) {
            for (g, &v) in px.iter_mut().zip(&ggap) {
                *g = v * inv;
            }
        }
    }
    for s in (0..n_stages).rev() {
        let conv = &params.encoder[s];
        let (h, w) = (cfg.input_h >> s, cfg.input_w >> s);
        let n_in = h * w * conv.cin;
        let n_pre = h * w * conv.cout;
        let n_out = (h / 2) * (w / 2) * conv.cout;
        let mut gpre = vec![F::zero(); n_pre];
        let mut gin = if s > 0 { vec![F::zero(); t_len * n_in] } else { Vec::new() };
        let gconv = &mut grads.encoder[s];
        for t in 0..t_len {
            avg_pool2_backward(&gact[t * n_out..(t + 1) * n_out], h, w, conv.cout, &mut gpre);
            let pre = &cache.stage_pre[s][t * n_pre..(t + 1) * n_pre];
            for (g, &p) in gpre.iter_mut().zip(pre) {
                *g *= silu_grad(p);
            }
            let gi = if s > 0 { Some(&mut gin[t * n_in..(t + 1) * n_in]) } else { None };
            conv3x3_backward(
                &cache.stage_in[s][t * n_in..(t + 1) * n_in],
                h,
                w,
                conv.cin,
                &conv.weight.data,
                conv.cout,
                &gpre,
                &mut gconv.weight.data,
                &mut gconv.bias.data,
                gi,
            );
        }
        gact = gin;
    }
    Ok(())
}

/// Per-stream flow-mode state: one normalization state and one hidden state
/// per block, plus fixed scratch buffers.
#[derive(Debug, Clone)]
pub struct ModelState<F> {
    tn: Vec<TnState<F>>,
    ssd: Vec<SsdState<F>>,
    frames_seen: u64,
    work: FlowScratch<F>,
}

#[derive(Debug, Clone)]
struct FlowScratch<F> {
    enc: EncoderWork<F>,
    u: Vec<F>,
    z: Vec<F>,
    x: Vec<F>,
    y: Vec<F>,
    tmp: Vec<F>,
    b: Vec<F>,
    c: Vec<F>,
    abar: Vec<F>,
    bbar: Vec<F>,
}

impl<F: Real> FlowScratch<F> {
    fn bytes(&self) -> usize {
        let vecs = [&self.u, &self.z, &self.x, &self.y, &self.tmp, &self.b, &self.c, &self.abar, &self.bbar];
        self.enc.bytes() + vecs.iter().map(|v| v.len()).sum::<usize>() * std::mem::size_of::<F>()
    }
}

impl<F: Real> ModelState<F> {
    /// Bytes of carried state: `Σ_blocks (N·D + 2D)` scalars.
    pub fn state_bytes(&self) -> usize {
        self.tn.iter().map(TnState::state_bytes).sum::<usize>()
            + self.ssd.iter().map(SsdState::state_bytes).sum::<usize>()
    }

    /// Bytes of per-step scratch buffers (not carried between frames).
    pub fn scratch_bytes(&self) -> usize {
        self.work.bytes()
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn tn_states(&self) -> &[TnState<F>] {
        &self.tn
    }

    pub fn ssd_states(&self) -> &[SsdState<F>] {
        &self.ssd
    }
}

/// Fresh stream state: normalization seeded on the first frame, hidden
/// states zero.
pub fn flow_init<F: Real>(params: &ModelParams<F>) -> Result<ModelState<F>> {
    let cfg = &params.config;
    let (d, n) = (cfg.feature_dim, cfg.state_dim);
    let alpha = F::of(cfg.tn_alpha);
    let eps = F::of(cfg.tn_eps);
    let tn = (0..cfg.n_blocks).map(|_| TnState::zeros(alpha, eps, d)).collect::<Result<_>>()?;
    let ssd = (0..cfg.n_blocks).map(|_| SsdState::zeros(n, d)).collect();
    let zd = || vec![F::zero(); d];
    let zn = || vec![F::zero(); n];
    Ok(ModelState {
        tn,
        ssd,
        frames_seen: 0,
        work: FlowScratch {
            enc: EncoderWork::new(cfg),
            u: zd(),
            z: zd(),
            x: zd(),
            y: zd(),
            tmp: zd(),
            b: zn(),
            c: zn(),
            abar: zn(),
            bbar: zn(),
        },
    })
}

/// Processes one `H×W×C` frame and returns its BVP value. Work and memory
/// do not depend on how many frames came before.
pub fn forward_flow_step<F: Real>(params: &ModelParams<F>, state: &mut ModelState<F>, frame: &[f32]) -> Result<F> {
    let cfg = &params.config;
    let expect = cfg.input_h * cfg.input_w * cfg.in_channels;
    if frame.len() != expect {
        return Err(Error::shape(format!(
            "model expects {}x{}x{} = {expect} frame values, got {}",
            cfg.input_h,
            cfg.input_w,
            cfg.in_channels,
            frame.len()
        )));
    }
    if state.tn.len() != params.blocks.len() {
        return Err(Error::shape("state was created for a different model"));
    }
    let d = cfg.feature_dim;
    let n = cfg.state_dim;
    let ws = &mut state.work;
    encode_frame(params, frame, &mut ws.enc, &mut ws.u);
    for (bi, blk) in params.blocks.iter().enumerate() {
        if cfg.tn_identity {
            ws.z.copy_from_slice(&ws.u);
        } else {
            let tn_state = &mut state.tn[bi];
            if tn_state.warm() == 0 {
                tn_state.reset_to(&ws.u);
            }
            tn_state.step(&ws.u, &mut ws.z);
        }
        matvec(&blk.in_proj.data, &ws.z, &mut ws.x);
        let mut s = F::zero();
        project_step(blk, &ws.z, &mut s, &mut ws.b, &mut ws.c);
        let dt = softplus(s);
        for (i, a) in blk.a_diag().enumerate() {
            let (ab, phi) = zoh_factors(a, dt);
            ws.abar[i] = ab;
            ws.bbar[i] = phi * ws.b[i];
        }
        ssd::step_raw(&ws.abar, &ws.bbar, &ws.c, n, 1, 1, d, state.ssd[bi].h_mut(), &ws.x, &mut ws.y);
        for ((yv, &xv), &dv) in ws.y.iter_mut().zip(&ws.x).zip(&blk.d_skip.data) {
            *yv += dv * xv;
        }
        linear(&blk.out_proj.weight.data, &blk.out_proj.bias.data, &ws.y, &mut ws.tmp);
        for ((uv, &zv), &o) in ws.u.iter_mut().zip(&ws.z).zip(&ws.tmp) {
            *uv = zv + o;
        }
    }
    let mut out = F::zero();
    linear(&params.head.weight.data, &params.head.bias.data, &ws.u, std::slice::from_mut(&mut out));
    state.frames_seen += 1;
    if !out.is_finite() {
        return Err(Error::numerical(format!("non-finite output at frame {}", state.frames_seen)));
    }
    Ok(out)
}
