//! Inference in either mode and chunked HR evaluation over clip sets.

use crate::data::{BvpSignal, Clip, FrameTensor};
use crate::error::{Error, Result};
use crate::model::{flow_init, forward_chunk_values, forward_flow_step, ModelParams};
use crate::real::Real;
use crate::signal::{estimate_hr, metrics, HrBand, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    /// Whole segment at once.
    Chunk,
    /// One frame at a time with a carried state.
    Flow,
}

impl std::str::FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunk" => Ok(Self::Chunk),
            "flow" => Ok(Self::Flow),
            _ => Err(Error::invalid(format!("mode must be chunk or flow, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for InferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Chunk => "chunk",
            Self::Flow => "flow",
        })
    }
}

/// Runs the model over all frames and returns one BVP value per frame.
pub fn infer<F: Real>(params: &ModelParams<F>, frames: &FrameTensor, mode: InferMode) -> Result<BvpSignal> {
    let out: Vec<f64> = match mode {
        InferMode::Chunk => forward_chunk_values(params, frames)?.into_iter().map(Real::f64).collect(),
        InferMode::Flow => {
            let mut state = flow_init(params)?;
            (0..frames.frames())
                .map(|t| forward_flow_step(params, &mut state, frames.frame(t)).map(Real::f64))
                .collect::<Result<_>>()?
        }
    };
    BvpSignal::new(out, frames.fps())
}

/// Predicted and reference HR for every `len`-frame chunk of every clip.
///
/// Chunk mode runs each chunk independently. Flow mode streams each clip
/// once and cuts the output into the same chunks. The reference HR comes
/// from the ground-truth BVP of the chunk through the same estimator.
pub fn chunk_hr_pairs<F: Real>(params: &ModelParams<F>, clips: &[Clip], len: usize, mode: InferMode) -> Result<(Vec<f64>, Vec<f64>)> {
    if len < 2 {
        return Err(Error::invalid("test chunk length must be >= 2"));
    }
    let band = HrBand::default();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for clip in clips {
        let n = clip.len() / len;
        if n == 0 {
            continue;
        }
        let streamed = match mode {
            InferMode::Flow => Some(infer(params, &clip.frames, InferMode::Flow)?),
            InferMode::Chunk => None,
        };
        for k in 0..n {
            let start = k * len;
            let p = match &streamed {
                Some(s) => s.slice(start, len)?,
                None => infer(params, &clip.frames.slice(start, len)?, InferMode::Chunk)?,
            };
            pred.push(estimate_hr(&p, band)?.bpm);
            truth.push(estimate_hr(&clip.bvp.slice(start, len)?, band)?.bpm);
        }
    }
    if pred.is_empty() {
        return Err(Error::invalid(format!("no clip is at least {len} frames long")));
    }
    Ok((pred, truth))
}

/// One metric report per test chunk length.
pub fn eval_grid<F: Real>(params: &ModelParams<F>, clips: &[Clip], lens: &[usize], mode: InferMode) -> Result<Vec<(usize, MetricReport)>> {
    lens.iter()
        .map(|&len| {
            let (p, t) = chunk_hr_pairs(params, clips, len, mode)?;
            Ok((len, metrics(&p, &t)?))
        })
        .collect()
}

/// HR of the per-clip reference: the clip's own BVP over its full length.
pub fn clip_hr(clip: &Clip) -> Result<f64> {
    Ok(estimate_hr(&clip.bvp, HrBand::default())?.bpm)
}
