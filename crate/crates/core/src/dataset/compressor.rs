//! Reference digital feed-forward compressor, the synthetic stand-in for a
//! hardware unit: every target it produces can be regenerated bit-exactly.
//!
//! Per-sample chain: optional second-order high-pass on the sidechain
//! (the thrust control), instantaneous level detection in dB, a soft-knee
//! static gain curve, one-pole attack/release ballistics on the gain in the
//! dB domain, and multiplicative application to the dry input.

use alloc::vec::Vec;

use crate::scalar::db;

use super::controls::CompressorSettings;
use super::AudioBuffer;

/// Butterworth high-pass biquad (bilinear transform), direct form II
/// transposed.
#[derive(Debug, Clone)]
struct HighPass {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl HighPass {
    fn new(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = libm::tan(core::f64::consts::PI * cutoff_hz / sample_rate);
        let q = core::f64::consts::FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        HighPass {
            b0: norm,
            b1: -2.0 * norm,
            b2: norm,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / q + k * k) * norm,
            z1: 0.0,
            z2: 0.0,
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Soft-knee static gain curve: returns the gain offset in dB (<= 0) for a
/// detector level in dB.
#[inline]
fn static_gain_db(level_db: f64, threshold_db: f64, ratio: f64, knee_db: f64) -> f64 {
    let overshoot = level_db - threshold_db;
    let slope = 1.0 / ratio - 1.0;
    if 2.0 * overshoot < -knee_db {
        0.0
    } else if 2.0 * overshoot.abs() <= knee_db {
        slope * (overshoot + knee_db / 2.0) * (overshoot + knee_db / 2.0) / (2.0 * knee_db)
    } else {
        slope * overshoot
    }
}

/// Runs the feed-forward compressor over a buffer. Output length equals
/// input length; processing is causal and time-invariant.
pub fn compressor_process(input: &AudioBuffer, settings: &CompressorSettings) -> AudioBuffer {
    let fs = input.sample_rate as f64;
    let alpha_attack = libm::exp(-1.0 / (settings.attack_s * fs));
    let alpha_release = libm::exp(-1.0 / (settings.release_s * fs));
    let mut sidechain_hp = settings
        .thrust
        .then(|| HighPass::new(settings.thrust_cutoff_hz, fs));

    let mut smoothed_db = 0.0f64;
    let mut out = Vec::with_capacity(input.samples.len());
    for &x in &input.samples {
        let sc = match &mut sidechain_hp {
            Some(hp) => hp.process(x),
            None => x,
        };
        let level_db = db::lin_to_db(libm::fabs(sc));
        let target_db = static_gain_db(level_db, settings.threshold_db, settings.ratio, settings.knee_db);
        let alpha = if target_db < smoothed_db { alpha_attack } else { alpha_release };
        smoothed_db = alpha * smoothed_db + (1.0 - alpha) * target_db;
        out.push(x * db::db_to_lin(smoothed_db));
    }
    AudioBuffer::from_samples(out)
}

/// Static curve evaluated directly, for tests and documentation plots.
pub fn static_curve_db(level_db: f64, settings: &CompressorSettings) -> f64 {
    level_db + static_gain_db(level_db, settings.threshold_db, settings.ratio, settings.knee_db)
}
