use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One modulation block: a dilated convolution feeding a temporal FiLM
/// sub-block (pool, LSTM, control-conditioned FiLM, upsample).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModBlockConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pool: usize,
    pub lstm_hidden: usize,
    pub film_hidden: usize,
}

/// Preset tag carried in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetTag {
    Sptmod24,
    Sptmod25,
    Custom,
}

/// Full effect-processor architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SptmodConfig {
    pub blocks: Vec<ModBlockConfig>,
    pub num_controls: usize,
    pub preset: PresetTag,
}

impl SptmodConfig {
    /// 3 blocks with 21/19/32 channels, kernels 9/29/25, pool 64,
    /// LSTM hidden 31, FiLM hidden 26.
    pub fn sptmod24(num_controls: usize) -> Self {
        let dims = [(21, 9), (19, 29), (32, 25)];
        SptmodConfig {
            blocks: dims
                .iter()
                .map(|&(out_channels, kernel)| ModBlockConfig {
                    out_channels,
                    kernel,
                    dilation: 1,
                    pool: 64,
                    lstm_hidden: 31,
                    film_hidden: 26,
                })
                .collect(),
            num_controls,
            preset: PresetTag::Sptmod24,
        }
    }

    /// 4 blocks with 15 channels each, kernel 3, FiLM hidden 32; pool and
    /// LSTM hidden as in sptmod24.
    pub fn sptmod25(num_controls: usize) -> Self {
        SptmodConfig {
            blocks: (0..4)
                .map(|_| ModBlockConfig {
                    out_channels: 15,
                    kernel: 3,
                    dilation: 1,
                    pool: 64,
                    lstm_hidden: 31,
                    film_hidden: 32,
                })
                .collect(),
            num_controls,
            preset: PresetTag::Sptmod25,
        }
    }

    /// Desk-scale configuration: 2 blocks with 6 channels, kernel 3,
    /// pool 16, LSTM hidden 8. Pairs with [`SpnConfig::mini`].
    pub fn mini(num_controls: usize) -> Self {
        SptmodConfig {
            blocks: (0..2)
                .map(|_| ModBlockConfig {
                    out_channels: 6,
                    kernel: 3,
                    dilation: 1,
                    pool: 16,
                    lstm_hidden: 8,
                    film_hidden: 8,
                })
                .collect(),
            num_controls,
            preset: PresetTag::Custom,
        }
    }

    pub fn preset_by_name(name: &str, num_controls: usize) -> Result<Self> {
        match name {
            "sptmod24" => Ok(Self::sptmod24(num_controls)),
            "sptmod25" => Ok(Self::sptmod25(num_controls)),
            "mini" => Ok(Self::mini(num_controls)),
            other => Err(Error::Config(alloc::format!(
                "unknown preset `{other}` (expected sptmod24, sptmod25 or mini)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config(String::from("model needs at least one block")));
        }
        if self.num_controls == 0 {
            return Err(Error::Config(String::from("model needs at least one control")));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (field, v) in [
                ("out_channels", b.out_channels),
                ("kernel", b.kernel),
                ("dilation", b.dilation),
                ("pool", b.pool),
                ("lstm_hidden", b.lstm_hidden),
                ("film_hidden", b.film_hidden),
            ] {
                if v == 0 {
                    return Err(Error::Config(alloc::format!("block {i}: {field} must be >= 1")));
                }
            }
        }
        Ok(())
    }

    /// Widths of the per-block recurrent state vectors (2·hidden each);
    /// their sum is the SPN's output width.
    pub fn state_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| 2 * b.lstm_hidden).collect()
    }

    pub fn total_state_width(&self) -> usize {
        self.state_widths().iter().sum()
    }
}

/// State prediction network architecture: a stack of conv/prelu/pool/FiLM
/// blocks that shrinks its input to one frame, then a linear layer mapping
/// to the concatenated recurrent state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpnConfig {
    pub num_blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub film_hidden: usize,
}

impl Default for SpnConfig {
    fn default() -> Self {
        SpnConfig {
            num_blocks: 7,
            channels: 16,
            kernel: 38,
            pool: 4,
            film_hidden: 8,
        }
    }
}

impl SpnConfig {
    /// Desk-scale network with a lookback under one second
    /// (3 blocks, kernel 5, pool 8: 804 samples ≈ 18 ms).
    pub fn mini() -> Self {
        SpnConfig {
            num_blocks: 3,
            channels: 8,
            kernel: 5,
            pool: 8,
            film_hidden: 8,
        }
    }

    /// The SPN sized to pair with a named processor preset.
    pub fn for_preset(name: &str) -> Result<Self> {
        match name {
            "sptmod24" | "sptmod25" => Ok(Self::default()),
            "mini" => Ok(Self::mini()),
            other => Err(Error::Config(alloc::format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("num_blocks", self.num_blocks),
            ("channels", self.channels),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("film_hidden", self.film_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(alloc::format!("spn: {field} must be >= 1")));
            }
        }
        Ok(())
    }
}
