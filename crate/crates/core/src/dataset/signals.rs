//! Synthetic source audio: a calibrated tone staircase, a procedural
//! stand-in for music excerpts, and ADSR-enveloped sound events. Everything
//! is a pure function of the seed.

use alloc::vec::Vec;

use crate::rng::Rng;
use crate::scalar::db;

use super::{AudioBuffer, SAMPLE_RATE};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Event density for the procedural sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDensity {
    /// Events nearly back to back.
    High,
    /// Events separated by stretches of low-amplitude noise, exposing the
    /// compressor's release behavior.
    Sparse,
}

/// 16-second calibration sequence: a 1000 Hz tone stepping in 1 dB
/// increments from -39 dB to 0 dB, as four groups of ten 0.25 s steps,
/// each group followed by three 0.5 s steps at -40 dB that trigger the
/// release phase. 4 x (10 x 0.25 + 3 x 0.5) = 16 s.
pub fn gen_tone_staircase() -> AudioBuffer {
    let fs = SAMPLE_RATE as f64;
    let step_len = (0.25 * fs) as usize;
    let sep_len = (0.5 * fs) as usize;
    let mut samples = Vec::with_capacity(16 * SAMPLE_RATE as usize);
    let mut n = 0usize;
    let mut tone = |amp: f64, len: usize, samples: &mut Vec<f64>| {
        for _ in 0..len {
            samples.push(amp * libm::sin(TWO_PI * 1000.0 * n as f64 / fs));
            n += 1;
        }
    };
    for group in 0..4 {
        for step in 0..10 {
            let level_db = -39.0 + (group * 10 + step) as f64;
            tone(db::db_to_lin(level_db), step_len, &mut samples);
        }
        for _ in 0..3 {
            tone(db::db_to_lin(-40.0), sep_len, &mut samples);
        }
    }
    debug_assert_eq!(samples.len(), 16 * SAMPLE_RATE as usize);
    AudioBuffer::from_samples(samples)
}

fn adsr(len: usize, rng: &mut Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let attack = ((rng.range(0.005, 0.1) * fs) as usize).max(1);
    let decay = ((rng.range(0.05, 0.3) * fs) as usize).max(1);
    let sustain = rng.range(0.3, 0.9);
    let release = ((rng.range(0.05, 0.4) * fs) as usize).max(1);
    let mut env = Vec::with_capacity(len);
    for i in 0..len {
        let v = if i < attack {
            i as f64 / attack as f64
        } else if i < attack + decay {
            1.0 + (sustain - 1.0) * (i - attack) as f64 / decay as f64
        } else if i + release >= len {
            sustain * (len - i) as f64 / release as f64
        } else {
            sustain
        };
        env.push(v);
    }
    env
}

fn render_event(rng: &mut Rng, len: usize) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let kind = rng.below(3);
    let mut body: Vec<f64> = match kind {
        // white noise
        0 => (0..len).map(|_| rng.range(-1.0, 1.0)).collect(),
        // oscillator with three harmonics and waveshaping
        1 => {
            let f0 = libm::exp(rng.range(libm::log(60.0), libm::log(1000.0)));
            let amps = [1.0, rng.range(0.1, 0.8), rng.range(0.05, 0.5)];
            let drive = rng.range(1.0, 5.0);
            let norm = libm::tanh(drive);
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    let mut v = 0.0;
                    for (h, a) in amps.iter().enumerate() {
                        v += a * libm::sin(TWO_PI * f0 * (h + 1) as f64 * t);
                    }
                    libm::tanh(drive * v / 2.0) / norm
                })
                .collect()
        }
        // linear or exponential chirp
        _ => {
            let f0 = rng.range(100.0, 5000.0);
            let f1 = rng.range(100.0, 5000.0);
            let duration = len as f64 / fs;
            let exponential = rng.below(2) == 1 && (f1 / f0 - 1.0).abs() > 1e-3;
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    let phase = if exponential {
                        let r = f1 / f0;
                        TWO_PI * f0 * duration / libm::log(r) * (libm::pow(r, t / duration) - 1.0)
                    } else {
                        TWO_PI * (f0 * t + (f1 - f0) * t * t / (2.0 * duration))
                    };
                    libm::sin(phase)
                })
                .collect()
        }
    };
    let env = adsr(len, rng);
    for (v, e) in body.iter_mut().zip(&env) {
        *v *= e;
    }
    // per-event normalization, then a random event gain
    let peak = body.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    if peak > 0.0 {
        let gain = rng.range(0.25, 1.0) / peak;
        for v in &mut body {
            *v *= gain;
        }
    }
    body
}

/// 20-second sequence of procedurally generated sound events (noise bursts,
/// waveshaped harmonic tones, chirps) under randomized ADSR envelopes.
pub fn gen_procedural_events(rng: &mut Rng, density: EventDensity) -> AudioBuffer {
    let fs = SAMPLE_RATE as f64;
    let total = 20 * SAMPLE_RATE as usize;
    let mut samples = Vec::with_capacity(total);
    while samples.len() < total {
        let event_len = ((rng.range(0.3, 1.2) * fs) as usize).min(total - samples.len());
        if event_len > 0 {
            samples.extend(render_event(rng, event_len));
        }
        if samples.len() >= total {
            break;
        }
        let gap_len = match density {
            EventDensity::High => (rng.range(0.0, 0.05) * fs) as usize,
            EventDensity::Sparse => (rng.range(0.4, 1.6) * fs) as usize,
        }
        .min(total - samples.len());
        match density {
            EventDensity::High => samples.extend(core::iter::repeat_n(0.0, gap_len)),
            EventDensity::Sparse => {
                samples.extend((0..gap_len).map(|_| rng.range(-0.003, 0.003)));
            }
        }
    }
    samples.truncate(total);
    AudioBuffer::from_samples(samples)
}

/// 40-second stand-in for music excerpts: ten 4-second polyphonic
/// oscillator mixtures, each peak-normalized, with peaks stepping from
/// 0 dB down to -20 dB across the ten segments.
pub fn gen_music_surrogate(rng: &mut Rng) -> AudioBuffer {
    let fs = SAMPLE_RATE as f64;
    let seg_len = 4 * SAMPLE_RATE as usize;
    let mut samples = Vec::with_capacity(10 * seg_len);
    for segment in 0..10 {
        let mut seg = alloc::vec![0.0f64; seg_len];
        let voices = 3 + rng.below(4);
        for _ in 0..voices {
            let midi = 36 + rng.below(49) as i32;
            let f0 = 440.0 * libm::pow(2.0, (midi - 69) as f64 / 12.0) * (1.0 + rng.range(-0.003, 0.003));
            let harmonics = 1 + rng.below(4);
            let amp = rng.range(0.2, 1.0);
            let attack = ((rng.range(0.02, 0.4) * fs) as usize).max(1);
            let decay_tau = rng.range(0.5, 3.0) * fs;
            let phase = rng.range(0.0, TWO_PI);
            for (i, v) in seg.iter_mut().enumerate() {
                let t = i as f64 / fs;
                let env = if i < attack { i as f64 / attack as f64 } else { libm::exp(-((i - attack) as f64) / decay_tau) };
                let mut tone = 0.0;
                for h in 1..=harmonics {
                    tone += libm::sin(TWO_PI * f0 * h as f64 * t + phase) / h as f64;
                }
                *v += amp * env * tone;
            }
        }
        let peak = seg.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        // normalize, then place on the 0 -> -20 dB ramp
        let ramp_db = -20.0 * segment as f64 / 9.0;
        let gain = if peak > 0.0 { db::db_to_lin(ramp_db) / peak } else { 0.0 };
        samples.extend(seg.iter().map(|v| v * gain));
    }
    AudioBuffer::from_samples(samples)
}
