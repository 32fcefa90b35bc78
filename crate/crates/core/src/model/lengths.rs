//! The padding-free length/crop solver.
//!
//! Without padding, every convolution shortens its input and every pooling
//! layer needs a length divisible by its pool size, while the binary
//! modulation sites need equal lengths on both operands. The solver picks
//! the input length and the per-site left-crops that emit exactly the
//! requested number of output samples while minimizing total cropping
//! (and, among equal-crop plans, the input length).
//!
//! All crops discard leading samples only; trailing samples are never
//! dropped, which is what keeps the network causal.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{SpnConfig, SptmodConfig};

/// Per-block length bookkeeping for one padding-free forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    /// Modulation-path length entering this block's convolution.
    pub input_len: usize,
    /// Left-crop applied to the convolution output before the TFiLM fork.
    pub mod_crop: usize,
    /// Block output length (pool input; always divisible by the pool size).
    pub output_len: usize,
    /// Frames after pooling.
    pub pooled_len: usize,
    /// Left-crop applied to the audio path at this block's gain site.
    pub audio_crop: usize,
}

/// Solved lengths for a padding-free pass emitting exactly `l_out` samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPlan {
    pub l_out: usize,
    /// Input length for the padding-free pass.
    pub l_nopad: usize,
    pub blocks: Vec<BlockPlan>,
    /// Sum of all crops, modulation and audio path.
    pub total_crop: usize,
}

impl LengthPlan {
    pub fn pooled_lengths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.pooled_len).collect()
    }
}

/// Solves input length and crop sizes for a padding-free forward pass.
///
/// Works backward from the output: each block's output length must be a
/// multiple of its pool size, and the previous block must supply that
/// length plus the convolution's reduction. Taking the smallest admissible
/// length at every step minimizes each crop (increasing any intermediate
/// length can only grow downstream requirements), so the plan is optimal
/// in (total crop, then l_nopad); the test suite checks this against an
/// exhaustive search.
pub fn solve_lengths(config: &SptmodConfig, l_out: usize) -> Result<LengthPlan> {
    config.validate()?;
    if l_out == 0 {
        return Err(Error::Config(alloc::string::String::from("l_out must be >= 1")));
    }
    let n = config.blocks.len();
    let mut output_len = vec![0usize; n];
    let mut mod_crop = vec![0usize; n];

    let last = &config.blocks[n - 1];
    if !l_out.is_multiple_of(last.pool) {
        return Err(Error::Config(alloc::format!(
            "l_out {} is not divisible by the final block's pool size {}",
            l_out,
            last.pool
        )));
    }
    output_len[n - 1] = l_out;
    for j in (1..n).rev() {
        let reduction = (config.blocks[j].kernel - 1) * config.blocks[j].dilation;
        let needed = output_len[j] + reduction;
        let pool = config.blocks[j - 1].pool;
        let rounded = needed.div_ceil(pool) * pool;
        output_len[j - 1] = rounded;
        mod_crop[j] = rounded - needed;
    }
    let l_nopad = output_len[0] + (config.blocks[0].kernel - 1) * config.blocks[0].dilation;

    let mut blocks = Vec::with_capacity(n);
    let mut total_crop = 0usize;
    for j in 0..n {
        let input_len = if j == 0 { l_nopad } else { output_len[j - 1] };
        let audio_crop = input_len - output_len[j];
        total_crop += mod_crop[j] + audio_crop;
        blocks.push(BlockPlan {
            input_len,
            mod_crop: mod_crop[j],
            output_len: output_len[j],
            pooled_len: output_len[j] / config.blocks[j].pool,
            audio_crop,
        });
    }
    Ok(LengthPlan {
        l_out,
        l_nopad,
        blocks,
        total_crop,
    })
}

/// Input length the SPN consumes: the unique length that reduces to exactly
/// one frame after all blocks, by the backward recursion
/// `len <- len·pool + (kernel − 1)`.
pub fn spn_lookback(config: &SpnConfig) -> usize {
    let mut len = 1usize;
    for _ in 0..config.num_blocks {
        len = len * config.pool + (config.kernel - 1);
    }
    len
}
