//! User controls: normalized values in [0, 1] plus their mapping onto the
//! reference compressor's discrete panels.
//!
//! Panel values are a recorded configuration, not a claim about any
//! hardware: threshold sits on a 4 dB grid from -20 to +20, the remaining
//! panels are conventional discrete lists.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Control order used throughout: threshold, attack, ratio, release,
/// knee, thrust. A seventh slot is accepted and ignored by the mapping
/// (reserved; models may condition on it).
pub const CONTROL_NAMES: [&str; 6] = ["threshold", "attack", "ratio", "release", "knee", "thrust"];

/// Normalized control values, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub values: Vec<f64>,
}

impl ControlVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v) || !v.is_finite()) {
            return Err(Error::Data(String::from("control values must lie in [0, 1]")));
        }
        Ok(ControlVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Physical compressor settings derived from a control vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSettings {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_s: f64,
    pub release_s: f64,
    pub knee_db: f64,
    pub thrust: bool,
    pub thrust_cutoff_hz: f64,
}

/// The discrete panels and how normalized values snap onto them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMapping {
    pub threshold_db: Vec<f64>,
    pub attack_ms: Vec<f64>,
    pub ratio: Vec<f64>,
    pub release_s: Vec<f64>,
    pub knee_db: Vec<f64>,
    pub thrust_cutoff_hz: f64,
}

impl Default for ControlMapping {
    fn default() -> Self {
        ControlMapping {
            threshold_db: (0..=10).map(|i| -20.0 + 4.0 * i as f64).collect(),
            attack_ms: alloc::vec![0.1, 0.3, 1.0, 3.0, 10.0, 30.0],
            ratio: alloc::vec![1.5, 2.0, 3.0, 4.0, 6.0, 10.0],
            release_s: alloc::vec![0.05, 0.1, 0.3, 0.5, 1.0, 2.0, 3.0],
            knee_db: alloc::vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            thrust_cutoff_hz: 500.0,
        }
    }
}

fn snap(panel: &[f64], v: f64) -> f64 {
    let idx = libm::round(v * (panel.len() - 1) as f64) as usize;
    panel[idx.min(panel.len() - 1)]
}

fn normalized_index(panel_len: usize, idx: usize) -> f64 {
    idx as f64 / (panel_len - 1) as f64
}

impl ControlMapping {
    /// Maps normalized controls to physical settings by snapping each value
    /// to its panel. Thrust switches at 0.5.
    pub fn to_settings(&self, controls: &ControlVector) -> Result<CompressorSettings> {
        if controls.len() < 6 {
            return Err(Error::Data(alloc::format!(
                "control vector has {} values, mapping needs 6",
                controls.len()
            )));
        }
        let v = &controls.values;
        Ok(CompressorSettings {
            threshold_db: snap(&self.threshold_db, v[0]),
            attack_s: snap(&self.attack_ms, v[1]) / 1000.0,
            ratio: snap(&self.ratio, v[2]),
            release_s: snap(&self.release_s, v[3]),
            knee_db: snap(&self.knee_db, v[4]),
            thrust: v[5] >= 0.5,
            thrust_cutoff_hz: self.thrust_cutoff_hz,
        })
    }

    /// Normalized vector for exact panel indices.
    pub fn from_indices(
        &self,
        threshold: usize,
        attack: usize,
        ratio: usize,
        release: usize,
        knee: usize,
        thrust_on: bool,
    ) -> ControlVector {
        ControlVector {
            values: alloc::vec![
                normalized_index(self.threshold_db.len(), threshold),
                normalized_index(self.attack_ms.len(), attack),
                normalized_index(self.ratio.len(), ratio),
                normalized_index(self.release_s.len(), release),
                normalized_index(self.knee_db.len(), knee),
                if thrust_on { 1.0 } else { 0.0 },
            ],
        }
    }

    /// The snapshot configuration: every control at its middle panel value
    /// (index ceil(n/2) - 1) except release, which sits at its maximum.
    pub fn snapshot_controls(&self) -> ControlVector {
        let mid = |n: usize| n.div_ceil(2) - 1;
        self.from_indices(
            mid(self.threshold_db.len()),
            mid(self.attack_ms.len()),
            mid(self.ratio.len()),
            self.release_s.len() - 1,
            mid(self.knee_db.len()),
            false,
        )
    }

    /// Panel index of a physical threshold value (values off the 4 dB grid
    /// are a configuration error).
    pub fn threshold_index(&self, db: f64) -> Result<usize> {
        self.threshold_db
            .iter()
            .position(|&t| (t - db).abs() < 1e-9)
            .ok_or_else(|| Error::Config(alloc::format!("threshold {db} dB is not on the 4 dB grid")))
    }

    pub fn ratio_index(&self, ratio: f64) -> Result<usize> {
        self.ratio
            .iter()
            .position(|&r| (r - ratio).abs() < 1e-9)
            .ok_or_else(|| Error::Config(alloc::format!("ratio {ratio} is not on the panel")))
    }
}
