//! The pulse-extraction network.
//!
//! Each frame passes through a 2D convolutional encoder (3×3 conv, SiLU,
//! 2×2 average pool per stage), global average pooling and a linear
//! projection to `D` features. A stack of temporal blocks then mixes the
//! per-frame features over time:
//!
//! ```text
//! z = TN(u)                       temporal normalization
//! x = W_x z + b_x
//! Δt, B, C = selective projections of z
//! y = SSD(x; Δt, B, C) + d ∘ x    N×D state, shared across the D columns
//! v = z + W_o y + b_o             residual
//! ```
//!
//! and a linear head maps each frame's features to one BVP value.

mod checkpoint;
pub mod layers;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointContents};
pub use network::{
    backward, encode_frames, flow_init, forward_chunk, forward_chunk_values, forward_flow_step,
    forward_train, ForwardCache, ModelState,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{join_list, KeyValues};
use crate::error::{Error, Result};
use crate::real::{cast_slice, Real};
use crate::tn;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub n_blocks: usize,
    pub feature_dim: usize,
    pub state_dim: usize,
    pub tn_alpha: f64,
    pub tn_eps: f64,
    /// Input-dependent `Δt`, `B`, `C`; otherwise a fixed (LTI) system.
    pub selective: bool,
    /// Debug switch: skip temporal normalization in every block.
    pub tn_identity: bool,
    /// Initial step size, before the softplus.
    pub dt_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_h: 32,
            input_w: 32,
            in_channels: 3,
            encoder_channels: vec![64, 128, 256],
            n_blocks: 2,
            feature_dim: 64,
            state_dim: 16,
            tn_alpha: tn::DEFAULT_ALPHA,
            tn_eps: tn::DEFAULT_EPS,
            selective: true,
            tn_identity: false,
            dt_init: 0.05,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for desk-scale training (8×8 input).
    pub fn desk() -> Self {
        Self {
            input_h: 8,
            input_w: 8,
            encoder_channels: vec![8, 16, 16],
            feature_dim: 16,
            state_dim: 8,
            ..Self::default()
        }
    }

    /// Spatial reduction of the encoder.
    pub fn downsample(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::invalid("encoder needs at least one conv stage"));
        }
        if self.encoder_channels.contains(&0)
            || self.in_channels == 0
            || self.feature_dim == 0
            || self.state_dim == 0
        {
            return Err(Error::invalid("channel, feature and state dims must be >= 1"));
        }
        let f = self.downsample();
        if self.input_h == 0 || self.input_w == 0 || self.input_h % f != 0 || self.input_w % f != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} must be a non-zero multiple of the encoder downsampling {f}",
                self.input_h, self.input_w
            )));
        }
        if !(self.tn_alpha > 0.0 && self.tn_alpha < 1.0) {
            return Err(Error::invalid(format!("tn_alpha must lie in (0, 1), got {}", self.tn_alpha)));
        }
        if !(self.tn_eps > 0.0) {
            return Err(Error::invalid("tn_eps must be > 0"));
        }
        if !(self.dt_init > 0.0 && self.dt_init.is_finite()) {
            return Err(Error::invalid("dt_init must be > 0"));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("input_h", self.input_h);
        kv.set("input_w", self.input_w);
        kv.set("in_channels", self.in_channels);
        kv.set("encoder_channels", join_list(&self.encoder_channels));
        kv.set("n_blocks", self.n_blocks);
        kv.set("feature_dim", self.feature_dim);
        kv.set("state_dim", self.state_dim);
        kv.set("tn_alpha", self.tn_alpha);
        kv.set("tn_eps", self.tn_eps);
        kv.set("selective", self.selective);
        kv.set("tn_identity", self.tn_identity);
        kv.set("dt_init", self.dt_init);
        kv.set("seed", self.seed);
    }

    /// Reads the model keys from `kv`, defaulting missing ones from `base`.
    pub fn from_kv(kv: &KeyValues, base: &ModelConfig) -> Result<Self> {
        let cfg = Self {
            input_h: kv.get("input_h")?.unwrap_or(base.input_h),
            input_w: kv.get("input_w")?.unwrap_or(base.input_w),
            in_channels: kv.get("in_channels")?.unwrap_or(base.in_channels),
            encoder_channels: kv
                .get_list("encoder_channels")?
                .unwrap_or_else(|| base.encoder_channels.clone()),
            n_blocks: kv.get("n_blocks")?.unwrap_or(base.n_blocks),
            feature_dim: kv.get("feature_dim")?.unwrap_or(base.feature_dim),
            state_dim: kv.get("state_dim")?.unwrap_or(base.state_dim),
            tn_alpha: kv.get("tn_alpha")?.unwrap_or(base.tn_alpha),
            tn_eps: kv.get("tn_eps")?.unwrap_or(base.tn_eps),
            selective: kv.get("selective")?.unwrap_or(base.selective),
            tn_identity: kv.get("tn_identity")?.unwrap_or(base.tn_identity),
            dt_init: kv.get("dt_init")?.unwrap_or(base.dt_init),
            seed: kv.get("seed")?.unwrap_or(base.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::of(rng.random_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: cast_slice(&self.data) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub cin: usize,
    pub cout: usize,
    /// `[3, 3, cin, cout]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<F> {
    pub din: usize,
    pub dout: usize,
    /// `[dout, din]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> LinearParams<F> {
    fn init(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Self {
            din,
            dout,
            weight: Tensor::uniform(&[dout, din], bound, rng),
            bias: Tensor::uniform(&[dout], bound, rng),
        }
    }
}

/// One temporal block. The selective weights are absent in LTI mode, where
/// `Δt`, `B` and `C` come from the biases alone.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F> {
    /// `[D, D]`, no bias, so a static input leaves the state at zero.
    pub in_proj: Tensor<F>,
    /// `[D]`
    pub dt_weight: Option<Tensor<F>>,
    /// `[1]`
    pub dt_bias: Tensor<F>,
    /// `[N, D]`
    pub b_weight: Option<Tensor<F>>,
    pub b_bias: Tensor<F>,
    /// `[N, D]`
    pub c_weight: Option<Tensor<F>>,
    pub c_bias: Tensor<F>,
    /// `A = −exp(a_log)`, so the diagonal stays negative.
    pub a_log: Tensor<F>,
    pub d_skip: Tensor<F>,
    pub out_proj: LinearParams<F>,
}

impl<F: Real> BlockParams<F> {
    pub fn a_diag(&self) -> impl Iterator<Item = F> + '_ {
        self.a_log.data.iter().map(|&v| -v.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub encoder: Vec<ConvParams<F>>,
    pub proj: LinearParams<F>,
    pub blocks: Vec<BlockParams<F>>,
    pub head: LinearParams<F>,
}

macro_rules! visit_tensors {
    ($self:ident, $f:ident, $iter:ident, ($($amp:tt)*), $opt:ident) => {{
        for (i, c) in $self.encoder.$iter().enumerate() {
            $f(&format!("encoder.{i}.weight"), $($amp)* c.weight);
            $f(&format!("encoder.{i}.bias"), $($amp)* c.bias);
        }
        $f("proj.weight", $($amp)* $self.proj.weight);
        $f("proj.bias", $($amp)* $self.proj.bias);
        for (i, b) in $self.blocks.$iter().enumerate() {
            $f(&format!("blocks.{i}.in_proj.weight"), $($amp)* b.in_proj);
            if let Some(t) = b.dt_weight.$opt() {
                $f(&format!("blocks.{i}.dt.weight"), t);
            }
            $f(&format!("blocks.{i}.dt.bias"), $($amp)* b.dt_bias);
            if let Some(t) = b.b_weight.$opt() {
                $f(&format!("blocks.{i}.b.weight"), t);
            }
            $f(&format!("blocks.{i}.b.bias"), $($amp)* b.b_bias);
            if let Some(t) = b.c_weight.$opt() {
                $f(&format!("blocks.{i}.c.weight"), t);
            }
            $f(&format!("blocks.{i}.c.bias"), $($amp)* b.c_bias);
            $f(&format!("blocks.{i}.a_log"), $($amp)* b.a_log);
            $f(&format!("blocks.{i}.d_skip"), $($amp)* b.d_skip);
            $f(&format!("blocks.{i}.out_proj.weight"), $($amp)* b.out_proj.weight);
            $f(&format!("blocks.{i}.out_proj.bias"), $($amp)* b.out_proj.bias);
        }
        $f("head.weight", $($amp)* $self.head.weight);
        $f("head.bias", $($amp)* $self.head.bias);
    }};
}

impl<F: Real> ModelParams<F> {
    /// Visits every parameter tensor in a fixed order.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&str, &'a Tensor<F>)) {
        visit_tensors!(self, f, iter, (&), as_ref);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<F>)) {
        visit_tensors!(self, f, iter_mut, (&mut), as_mut);
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|n, _| out.push(n.to_string()));
        out
    }

    /// Same structure, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v = F::zero()));
        z
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let conv = |c: &ConvParams<F>| ConvParams {
            cin: c.cin,
            cout: c.cout,
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let lin = |l: &LinearParams<F>| LinearParams {
            din: l.din,
            dout: l.dout,
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        ModelParams {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(conv).collect(),
            proj: lin(&self.proj),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    in_proj: b.in_proj.cast(),
                    dt_weight: b.dt_weight.as_ref().map(Tensor::cast),
                    dt_bias: b.dt_bias.cast(),
                    b_weight: b.b_weight.as_ref().map(Tensor::cast),
                    b_bias: b.b_bias.cast(),
                    c_weight: b.c_weight.as_ref().map(Tensor::cast),
                    c_bias: b.c_bias.cast(),
                    a_log: b.a_log.cast(),
                    d_skip: b.d_skip.cast(),
                    out_proj: lin(&b.out_proj),
                })
                .collect(),
            head: lin(&self.head),
        }
    }

    /// Bytes held by parameter values.
    pub fn weight_bytes(&self) -> usize {
        param_count(self) * std::mem::size_of::<F>()
    }

    /// Checks every tensor is finite.
    pub fn check_finite(&self) -> Result<()> {
        let mut bad = None;
        self.for_each(|n, t| {
            if bad.is_none() && t.data.iter().any(|v| !v.is_finite()) {
                bad = Some(n.to_string());
            }
        });
        match bad {
            Some(n) => Err(Error::numerical(format!("parameter {n} is not finite"))),
            None => Ok(()),
        }
    }
}

/// Total number of scalar parameters.
pub fn param_count<F: Real>(params: &ModelParams<F>) -> usize {
    let mut n = 0;
    params.for_each(|_, t| n += t.len());
    n
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Fan-in-scaled uniform initialization, deterministic in `cfg.seed`.
pub fn init_model<F: Real>(cfg: &ModelConfig) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = Vec::with_capacity(cfg.encoder_channels.len());
    let mut cin = cfg.in_channels;
    for &cout in &cfg.encoder_channels {
        let bound = 1.0 / ((9 * cin) as f64).sqrt();
        encoder.push(ConvParams {
            cin,
            cout,
            weight: Tensor::uniform(&[3, 3, cin, cout], bound, &mut rng),
            bias: Tensor::uniform(&[cout], bound, &mut rng),
        });
        cin = cout;
    }
    let d = cfg.feature_dim;
    let n = cfg.state_dim;
    let proj = LinearParams::init(cin, d, &mut rng);
    let dt_bias = inverse_softplus(cfg.dt_init);
    let bound = 1.0 / (d as f64).sqrt();
    let blocks = (0..cfg.n_blocks)
        .map(|_| {
            let in_proj = Tensor::uniform(&[d, d], bound, &mut rng);
            let (dt_weight, b_weight, c_weight) = if cfg.selective {
                (
                    Some(Tensor::uniform(&[d], 0.1 * bound, &mut rng)),
                    Some(Tensor::uniform(&[n, d], bound, &mut rng)),
                    Some(Tensor::uniform(&[n, d], bound, &mut rng)),
                )
            } else {
                (None, None, None)
            };
            BlockParams {
                in_proj,
                dt_weight,
                dt_bias: Tensor { shape: vec![1], data: vec![F::of(dt_bias)] },
                b_weight,
                b_bias: Tensor::uniform(&[n], bound, &mut rng),
                c_weight,
                c_bias: Tensor::uniform(&[n], bound, &mut rng),
                a_log: Tensor {
                    shape: vec![n],
                    data: (1..=n).map(|i| F::of((i as f64).ln())).collect(),
                },
                d_skip: Tensor { shape: vec![d], data: vec![F::one(); d] },
                out_proj: LinearParams::init(d, d, &mut rng),
            }
        })
        .collect();
    let head = LinearParams::init(d, 1, &mut rng);
    Ok(ModelParams { config: cfg.clone(), encoder, proj, blocks, head })
}
