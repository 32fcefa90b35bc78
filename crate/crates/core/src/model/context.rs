use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

use super::config::SptmodConfig;

/// Carried state of one modulation block: the LSTM state plus the padding
/// caches of its temporal ops.
#[derive(Debug, Clone)]
pub struct BlockContext<S> {
    /// LSTM hidden state `[B, H]`.
    pub lstm_h: Tensor<S>,
    /// LSTM cell state `[B, H]`.
    pub lstm_c: Tensor<S>,
    /// Trailing `(k-1)·d` input samples of the block convolution
    /// `[B, Cin, (k-1)·d]`.
    pub conv_cache: Tensor<S>,
    /// Residue needed to realign pooling to frame boundaries. Streamed
    /// buffers must be multiples of every pool size, so this stays empty;
    /// it is kept to make the cache layout explicit.
    pub pool_residue: Tensor<S>,
    /// Last two frame values feeding the upsampler `[B, H, 2]`.
    pub upsample_prev: Tensor<S>,
}

/// Everything one model instance carries across streamed buffers: all LSTM
/// states plus all padding caches. This is the object TBPTT carries,
/// detaches and resets. A fresh context has zero states and empty caches.
#[derive(Debug, Clone)]
pub struct RecurrentContext<S> {
    pub blocks: Vec<BlockContext<S>>,
    /// False until a forward pass has populated the caches.
    primed: bool,
}

impl<S: Scalar> RecurrentContext<S> {
    /// Zero states, empty caches.
    pub fn fresh(config: &SptmodConfig, batch: usize) -> Self {
        let mut in_channels = 1;
        let blocks = config
            .blocks
            .iter()
            .map(|b| {
                let ctx = BlockContext {
                    lstm_h: Tensor::zeros(&[batch, b.lstm_hidden]),
                    lstm_c: Tensor::zeros(&[batch, b.lstm_hidden]),
                    conv_cache: Tensor::zeros(&[batch, in_channels, 0]),
                    pool_residue: Tensor::zeros(&[batch, b.out_channels, 0]),
                    upsample_prev: Tensor::zeros(&[batch, b.lstm_hidden, 0]),
                };
                in_channels = b.out_channels;
                ctx
            })
            .collect();
        RecurrentContext { blocks, primed: false }
    }

    pub(crate) fn primed(blocks: Vec<BlockContext<S>>) -> Self {
        RecurrentContext { blocks, primed: true }
    }

    /// Rebuilds a primed context from raw block states, e.g. values copied
    /// out of another context. The caller vouches that the caches describe
    /// a real stream position.
    pub fn from_blocks(blocks: Vec<BlockContext<S>>) -> Self {
        RecurrentContext { blocks, primed: true }
    }

    /// Whether the padding caches have been populated by a forward pass.
    pub fn is_primed(&self) -> bool {
        self.primed
    }

    pub fn batch(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.lstm_h.shape()[0])
    }
}
