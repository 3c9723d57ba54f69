//! Per-frame layers (channels-last `H×W×C`) and their reverse-mode passes.

use crate::real::Real;

#[inline]
pub fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

#[inline]
pub fn silu_grad<F: Real>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

/// 3×3 convolution, stride 1, zero padding 1. `weight` is `[3][3][cin][cout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3<F: Real>(
    inp: &[F],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[F],
    bias: &[F],
    cout: usize,
    out: &mut [F],
) {
    debug_assert_eq!(inp.len(), h * w * cin);
    debug_assert_eq!(out.len(), h * w * cout);
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let iy = y + ky;
                if iy == 0 || iy > h {
                    continue;
                }
                let iy = iy - 1;
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix == 0 || ix > w {
                        continue;
                    }
                    let ix = ix - 1;
                    let ip = &inp[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let wbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &v) in ip.iter().enumerate() {
                        let wr = &weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (ov, &wv) in o.iter_mut().zip(wr) {
                            *ov += v * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients and, if `grad_in` is given, the
/// input gradient of [`conv3x3`].
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<F: Real>(
    inp: &[F],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[F],
    cout: usize,
    grad_out: &[F],
    grad_w: &mut [F],
    grad_b: &mut [F],
    mut grad_in: Option<&mut [F]>,
) {
    if let Some(gi) = grad_in.as_deref_mut() {
        gi.iter_mut().for_each(|v| *v = F::zero());
    }
    for y in 0..h {
        for x in 0..w {
            let g = &grad_out[(y * w + x) * cout..(y * w + x + 1) * cout];
            for (gb, &gv) in grad_b.iter_mut().zip(g) {
                *gb += gv;
            }
            for ky in 0..3 {
                let iy = y + ky;
                if iy == 0 || iy > h {
                    continue;
                }
                let iy = iy - 1;
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix == 0 || ix > w {
                        continue;
                    }
                    let ix = ix - 1;
                    let pix = (iy * w + ix) * cin;
                    let wbase = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = inp[pix + ci];
                        let off = wbase + ci * cout;
                        let gw = &mut grad_w[off..off + cout];
                        for (gwv, &gv) in gw.iter_mut().zip(g) {
                            *gwv += v * gv;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let wr = &weight[off..off + cout];
                            let mut acc = F::zero();
                            for (&wv, &gv) in wr.iter().zip(g) {
                                acc += wv * gv;
                            }
                            gi[pix + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2<F: Real>(inp: &[F], h: usize, w: usize, c: usize, out: &mut [F]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    for y in 0..ho {
        for x in 0..wo {
            let o = &mut out[(y * wo + x) * c..(y * wo + x + 1) * c];
            o.iter_mut().for_each(|v| *v = F::zero());
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let p = ((2 * y + dy) * w + 2 * x + dx) * c;
                for (ov, &iv) in o.iter_mut().zip(&inp[p..p + c]) {
                    *ov += iv;
                }
            }
            o.iter_mut().for_each(|v| *v *= quarter);
        }
    }
}

pub fn avg_pool2_backward<F: Real>(grad_out: &[F], h: usize, w: usize, c: usize, grad_in: &mut [F]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    grad_in.iter_mut().for_each(|v| *v = F::zero());
    for y in 0..ho {
        for x in 0..wo {
            let g = &grad_out[(y * wo + x) * c..(y * wo + x + 1) * c];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let p = ((2 * y + dy) * w + 2 * x + dx) * c;
                for (gi, &gv) in grad_in[p..p + c].iter_mut().zip(g) {
                    *gi = gv * quarter;
                }
            }
        }
    }
}

/// Spatial mean per channel.
pub fn global_avg_pool<F: Real>(inp: &[F], hw: usize, c: usize, out: &mut [F]) {
    out.iter_mut().for_each(|v| *v = F::zero());
    for px in inp.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = F::one() / F::of(hw as f64);
    out.iter_mut().for_each(|v| *v *= inv);
}

/// `out = W x + b` with `W` row-major `dout×din`.
pub fn linear<F: Real>(weight: &[F], bias: &[F], x: &[F], out: &mut [F]) {
    matvec(weight, x, out);
    for (o, &b) in out.iter_mut().zip(bias) {
        *o += b;
    }
}

/// `out = W x` with `W` row-major `dout×din`.
pub fn matvec<F: Real>(weight: &[F], x: &[F], out: &mut [F]) {
    let din = x.len();
    for (o, row) in out.iter_mut().zip(weight.chunks_exact(din)) {
        let mut acc = F::zero();
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// Accumulates `∂W += g xᵀ`, `∂b += g` (when there is a bias) and adds
/// `Wᵀ g` into `grad_x`.
pub fn linear_backward<F: Real>(
    weight: &[F],
    x: &[F],
    grad_out: &[F],
    grad_w: &mut [F],
    mut grad_b: Option<&mut [F]>,
    grad_x: Option<&mut [F]>,
) {
    let din = x.len();
    for (o, &g) in grad_out.iter().enumerate() {
        if let Some(gb) = grad_b.as_deref_mut() {
            gb[o] += g;
        }
        let gw = &mut grad_w[o * din..(o + 1) * din];
        for (gwv, &xv) in gw.iter_mut().zip(x) {
            *gwv += g * xv;
        }
    }
    if let Some(gx) = grad_x {
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &weight[o * din..(o + 1) * din];
            for (gxv, &wv) in gx.iter_mut().zip(row) {
                *gxv += g * wv;
            }
        }
    }
}
