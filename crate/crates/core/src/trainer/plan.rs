//! TBPTT geometry and epoch batch planning.
//!
//! Training groups N consecutive sub-sequences: the first runs padding-free
//! with SPN warm-start (its buffer holds both the lookback prefix and the
//! padding-free suffix), the rest stream with cached padding at length L.
//! Long windows of `l_in0 + (N-1)·L` samples are cut from each item with a
//! stride of `L_c = N·L`, shuffled each epoch, and grouped into batches.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The (N, B, L) hyperparameters and the derived slicing geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TbpttPlan {
    /// Sub-sequences per group (weight updates per state reset).
    pub n: usize,
    /// Batch size.
    pub batch: usize,
    /// Sub-sequence output length L.
    pub seq_len: usize,
    /// Padding-free input length for the model at output length L.
    pub l_nopad: usize,
    /// Lookback samples the SPN consumes.
    pub l_lookback: usize,
}

impl TbpttPlan {
    pub fn new(
        n: usize,
        batch: usize,
        seq_len: usize,
        l_nopad: usize,
        l_lookback: usize,
        stream_granule: usize,
    ) -> Result<Self> {
        if n == 0 || batch == 0 || seq_len == 0 {
            return Err(Error::Config(alloc::string::String::from(
                "N, B and L must all be >= 1",
            )));
        }
        if !seq_len.is_multiple_of(stream_granule) {
            return Err(Error::Config(alloc::format!(
                "L = {seq_len} must be a multiple of the stream granule {stream_granule}"
            )));
        }
        if l_nopad < seq_len {
            return Err(Error::Config(alloc::format!(
                "l_nopad {l_nopad} shorter than L {seq_len}"
            )));
        }
        Ok(TbpttPlan {
            n,
            batch,
            seq_len,
            l_nopad,
            l_lookback,
        })
    }

    /// Cumulative output length of one group, `L_c = N·L`.
    pub fn cumulative_len(&self) -> usize {
        self.n * self.seq_len
    }

    /// Input buffer length for the first iteration:
    /// `L + max(L_nopad − L, L_lookback)`.
    pub fn first_input_len(&self) -> usize {
        self.seq_len + (self.l_nopad - self.seq_len).max(self.l_lookback)
    }

    /// Long-window length cut from items: `L_in0 + (N−1)·L`.
    pub fn long_len(&self) -> usize {
        self.first_input_len() + (self.n - 1) * self.seq_len
    }

    /// Stride between long windows.
    pub fn step(&self) -> usize {
        self.cumulative_len()
    }

    /// Per-iteration input lengths, `(L_in0, L, ..., L)`.
    pub fn sub_lengths(&self) -> Vec<usize> {
        let mut lens = alloc::vec![self.first_input_len()];
        lens.extend(core::iter::repeat_n(self.seq_len, self.n - 1));
        lens
    }
}

/// One long window: an item and the offset it starts at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub item: usize,
    pub offset: usize,
}

/// An epoch's shuffled batch groups, plus items too short to contribute.
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    /// Each group holds exactly `batch` windows.
    pub groups: Vec<Vec<WindowRef>>,
    pub skipped_items: Vec<usize>,
    /// Windows dropped because they did not fill a batch.
    pub dropped_windows: usize,
}

/// Extracts long windows from every item at the plan's stride, shuffles
/// them, and groups them into full batches. Items shorter than one long
/// window are skipped (recorded, not fatal); leftover windows that do not
/// fill a batch are dropped.
pub fn plan_batches(item_lengths: &[usize], plan: &TbpttPlan, epoch_seed: u64) -> EpochSchedule {
    let long_len = plan.long_len();
    let step = plan.step();
    let mut windows = Vec::new();
    let mut skipped_items = Vec::new();
    for (item, &len) in item_lengths.iter().enumerate() {
        if len < long_len {
            skipped_items.push(item);
            continue;
        }
        let mut offset = 0;
        while offset + long_len <= len {
            windows.push(WindowRef { item, offset });
            offset += step;
        }
    }
    let mut rng = Rng::seed_from(epoch_seed);
    rng.shuffle(&mut windows);
    let full_groups = windows.len() / plan.batch;
    let dropped_windows = windows.len() - full_groups * plan.batch;
    windows.truncate(full_groups * plan.batch);
    let groups = windows.chunks(plan.batch).map(|c| c.to_vec()).collect();
    EpochSchedule {
        groups,
        skipped_items,
        dropped_windows,
    }
}
