//! Synthetic datasets: source audio, reference-compressor targets,
//! parameter sampling and cross-validation splits.
//!
//! Items are described first ([`DatasetSpec`]) and materialized one at a
//! time: a 96-second item weighs ~68 MB in double precision, so callers
//! stream items through WAV export or precision casting instead of holding
//! a whole dataset resident.

mod compressor;
mod controls;
mod sampling;
mod signals;

pub use compressor::{compressor_process, static_curve_db};
pub use controls::{CompressorSettings, ControlMapping, ControlVector, CONTROL_NAMES};
pub use sampling::{latin_hypercube, make_splits, SplitEntry, SplitSet};
pub use signals::{gen_music_surrogate, gen_procedural_events, gen_tone_staircase, EventDensity};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The fixed dataset sample rate.
pub const SAMPLE_RATE: u32 = 44_100;

/// Mono sample sequence at the dataset sample rate; the universal signal
/// carrier. Generation always runs in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|v| v.is_finite()));
        AudioBuffer {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Subtracts the arithmetic mean from a buffer (DC removal).
pub fn remove_dc(buf: &AudioBuffer) -> AudioBuffer {
    let mean = buf.mean();
    AudioBuffer {
        samples: buf.samples.iter().map(|v| v - mean).collect(),
        sample_rate: buf.sample_rate,
    }
}

/// One input/target pair with the controls that produced the target.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub input: AudioBuffer,
    pub target: AudioBuffer,
    pub controls: ControlVector,
}

/// The three parameter-sampling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// 16 items, one fixed control configuration (middles, release at max).
    Snapshot,
    /// 16 items over the threshold {4, 0, -4, -8} dB x ratio {3, 4, 6, 10}
    /// grid, other controls as in the snapshot configuration.
    ThresholdRatio,
    /// 160 items, Latin hypercube sampling over all controls.
    Full,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "snapshot" => Ok(DatasetKind::Snapshot),
            "threshold-ratio" | "threshold_ratio" => Ok(DatasetKind::ThresholdRatio),
            "full" => Ok(DatasetKind::Full),
            other => Err(Error::Config(alloc::format!("unknown dataset kind `{other}`"))),
        }
    }

    pub fn item_count(self) -> usize {
        match self {
            DatasetKind::Snapshot | DatasetKind::ThresholdRatio => 16,
            DatasetKind::Full => 160,
        }
    }

    /// Split sizes used by cross-validation for this dataset size.
    pub fn split_counts(self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Snapshot | DatasetKind::ThresholdRatio => (8, 4, 4),
            DatasetKind::Full => (128, 16, 16),
        }
    }
}

/// One item's identity and controls; audio is generated on materialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    pub controls: ControlVector,
    pub settings: CompressorSettings,
}

/// A fully described dataset: kind, seed, mapping, per-item controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub seed: u64,
    pub mapping: ControlMapping,
    pub items: Vec<ItemSpec>,
}

/// Builds the item list for a dataset kind. Deterministic per seed.
pub fn build_dataset(kind: DatasetKind, seed: u64) -> Result<DatasetSpec> {
    let mapping = ControlMapping::default();
    let mut rng = Rng::seed_from(seed).derive(0x5A17);
    let items = match kind {
        DatasetKind::Snapshot => {
            let controls = mapping.snapshot_controls();
            let settings = mapping.to_settings(&controls)?;
            (0..16)
                .map(|i| ItemSpec {
                    id: alloc::format!("snapshot-{i:02}"),
                    controls: controls.clone(),
                    settings: settings.clone(),
                })
                .collect()
        }
        DatasetKind::ThresholdRatio => {
            let snapshot = mapping.snapshot_controls();
            let thresholds = [4.0, 0.0, -4.0, -8.0];
            let ratios = [3.0, 4.0, 6.0, 10.0];
            let mut items = Vec::with_capacity(16);
            for (ti, &t) in thresholds.iter().enumerate() {
                for (ri, &r) in ratios.iter().enumerate() {
                    let mut controls = snapshot.clone();
                    controls.values[0] =
                        mapping.threshold_index(t)? as f64 / (mapping.threshold_db.len() - 1) as f64;
                    controls.values[2] = mapping.ratio_index(r)? as f64 / (mapping.ratio.len() - 1) as f64;
                    let settings = mapping.to_settings(&controls)?;
                    items.push(ItemSpec {
                        id: alloc::format!("threshold-ratio-{:02}", ti * 4 + ri),
                        controls,
                        settings,
                    });
                }
            }
            items
        }
        DatasetKind::Full => {
            // Stored normalized values are the raw LHS draws (preserving
            // stratification); physical settings snap them to the panels.
            let points = latin_hypercube(&mut rng, 160, 6);
            points
                .into_iter()
                .enumerate()
                .map(|(i, values)| {
                    let controls = ControlVector { values };
                    let settings = mapping.to_settings(&controls)?;
                    Ok(ItemSpec {
                        id: alloc::format!("full-{i:03}"),
                        controls,
                        settings,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(DatasetSpec {
        kind,
        seed,
        mapping,
        items,
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// The 96-second source program for one item: tone staircase, music
/// surrogate, dense events, sparse events. Per-item generation derives its
/// randomness from the dataset seed and the item id, so items materialize
/// identically in any order.
pub fn gen_item_source(dataset_seed: u64, item_id: &str) -> AudioBuffer {
    let root = Rng::seed_from(dataset_seed).derive(fnv1a(item_id.as_bytes()));
    let mut samples = gen_tone_staircase().samples;
    samples.extend(gen_music_surrogate(&mut root.derive(1)).samples);
    samples.extend(gen_procedural_events(&mut root.derive(2), EventDensity::High).samples);
    samples.extend(gen_procedural_events(&mut root.derive(3), EventDensity::Sparse).samples);
    AudioBuffer::from_samples(samples)
}

/// Materializes one item: generates the source, renders the target through
/// the reference compressor, and removes DC from both.
pub fn materialize_item(spec: &DatasetSpec, index: usize) -> DatasetItem {
    let item = &spec.items[index];
    let input = gen_item_source(spec.seed, &item.id);
    let target = compressor_process(&input, &item.settings);
    DatasetItem {
        id: item.id.clone(),
        input: remove_dc(&input),
        target: remove_dc(&target),
        controls: item.controls.clone(),
    }
}
