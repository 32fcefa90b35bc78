//! The SPTMod effect processor, its state prediction network, the
//! padding-free length/crop solver and the cached-padding machinery for
//! streamed inference.

mod config;
mod context;
mod init;
mod lengths;
mod spn;
mod sptmod;

pub use config::{ModBlockConfig, PresetTag, SpnConfig, SptmodConfig};
pub use context::{BlockContext, RecurrentContext};
pub use lengths::{solve_lengths, spn_lookback, BlockPlan, LengthPlan};
pub use spn::Spn;
pub use sptmod::{ForwardPass, InitialStates, Sptmod};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(mut a: usize, mut b: usize) -> usize {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    }
    a / gcd(a, b) * b
}

/// Least buffer length granule for cached passes: streamed buffers must be
/// multiples of every block's pool size.
pub fn stream_granule(config: &SptmodConfig) -> usize {
    config.blocks.iter().map(|b| b.pool).fold(1, lcm)
}

/// Warm-up alternative to the SPN: runs the processor over warm-up audio,
/// discards the outputs, and returns the resulting context. The warm-up
/// buffer must be at least `plan.l_nopad` long, and any samples beyond
/// that must form whole stream granules.
pub fn make_cached_context<S: Scalar>(
    model: &Sptmod<S>,
    plan: &LengthPlan,
    warmup: &Tensor<S>,
    controls: &Tensor<S>,
) -> Result<RecurrentContext<S>> {
    let (_, _, total) = warmup.dims3("make_cached_context")?;
    if total < plan.l_nopad {
        return Err(Error::Contract(alloc::format!(
            "warm-up length {} shorter than l_nopad {}",
            total,
            plan.l_nopad
        )));
    }
    let granule = stream_granule(model.config());
    let rest = total - plan.l_nopad;
    if !rest.is_multiple_of(granule) {
        return Err(Error::Contract(alloc::format!(
            "warm-up tail {} is not a multiple of the stream granule {}",
            rest,
            granule
        )));
    }
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let head = slice_time(warmup, 0, plan.l_nopad);
    let input = tape.constant(head);
    let ctrl = tape.constant(controls.clone());
    let (_, mut ctx) = model.forward(
        &mut tape,
        &binding,
        input,
        ctrl,
        ForwardPass::NoPad {
            plan,
            states: InitialStates::Fresh,
        },
    )?;
    if rest > 0 {
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let tail = slice_time(warmup, plan.l_nopad, rest);
        let input = tape.constant(tail);
        let ctrl = tape.constant(controls.clone());
        let (_, next) = model.forward(&mut tape, &binding, input, ctrl, ForwardPass::Cached { ctx: &ctx })?;
        ctx = next;
    }
    Ok(ctx)
}

/// Value copy of a `[B, C, T]` time range `start..start+len`.
pub fn slice_time<S: Scalar>(x: &Tensor<S>, start: usize, len: usize) -> Tensor<S> {
    let (b, c, t) = match *x.shape() {
        [b, c, t] => (b, c, t),
        _ => panic!("slice_time expects rank 3"),
    };
    assert!(start + len <= t, "slice {}..{} out of length {}", start, start + len, t);
    let mut data = alloc::vec::Vec::with_capacity(b * c * len);
    for bc in 0..b * c {
        data.extend_from_slice(&x.data()[bc * t + start..bc * t + start + len]);
    }
    Tensor::from_parts(alloc::vec![b, c, len], data)
}
