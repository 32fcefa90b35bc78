//! The four training loss terms and their weighted sum.
//!
//! Time domain: mean absolute error and error-to-signal ratio. Spectral
//! domain: multi-resolution STFT loss (spectral convergence plus
//! log-magnitude L1) and multi-resolution energy ESR, both averaged over
//! window sizes {512, 1024, 2048} with hop W/4.
//!
//! Every term is built on the tape against a constant target, so the
//! combined loss is differentiable end to end with respect to the
//! prediction. Frames start at index 0 with no centering or padding, and
//! only complete windows count — consistent with the padding-free
//! discipline used everywhere else.

pub mod fft;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Spectral-term configuration. Hop is fixed at W/4 (75% overlap).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectralConfig {
    pub window_sizes: Vec<usize>,
    /// Magnitudes are floored by this inside the log.
    pub log_epsilon: f64,
    /// Window-energy denominators are floored by this.
    pub energy_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            window_sizes: alloc::vec![512, 1024, 2048],
            log_epsilon: 1e-8,
            energy_floor: 1e-12,
        }
    }
}

impl SpectralConfig {
    pub fn hop(window: usize) -> usize {
        window / 4
    }

    /// Smallest signal length the spectral terms accept.
    pub fn min_signal_len(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// The individual terms and their weighted sum,
/// `total = 100·mae + esr + mr_stft + mr_eesr`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossBreakdown {
    pub mae: f64,
    pub esr: f64,
    pub mr_stft: f64,
    pub mr_eesr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(mae: f64, esr: f64, mr_stft: f64, mr_eesr: f64) -> f64 {
        100.0 * mae + esr + mr_stft + mr_eesr
    }
}

fn check_same_shape<S: Scalar>(
    op: &'static str,
    tape: &Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
) -> Result<()> {
    if tape.value(pred).shape() != target.shape() {
        return Err(shape_err!(
            op,
            "prediction shape {:?} vs target shape {:?}",
            tape.value(pred).shape(),
            target.shape()
        ));
    }
    Ok(())
}

/// Mean absolute error, `(1/L)·Σ|ŷ−y|`.
pub fn mae<S: Scalar>(tape: &mut Tape<S>, pred: ValueId, target: &Tensor<S>) -> Result<ValueId> {
    check_same_shape("mae", tape, pred, target)?;
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let a = tape.abs(diff)?;
    tape.mean(a)
}

/// Error-to-signal ratio, `Σ(y−ŷ)² / Σy²`. The reference must carry energy.
pub fn esr<S: Scalar>(tape: &mut Tape<S>, pred: ValueId, target: &Tensor<S>) -> Result<ValueId> {
    check_same_shape("esr", tape, pred, target)?;
    let energy: S = target.data().iter().map(|&v| v * v).sum();
    if energy <= S::ZERO {
        return Err(Error::Data(alloc::string::String::from(
            "esr reference signal has zero energy",
        )));
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    tape.scale(s, S::ONE / energy)
}

/// STFT magnitudes of a plain tensor, through the same kernel the tape op
/// uses (so target and prediction follow an identical float path).
pub fn stft_mags_plain<S: Scalar>(x: &Tensor<S>, window: usize, hop: usize) -> Result<Tensor<S>> {
    let mut scratch = Tape::new();
    let id = scratch.constant(x.clone());
    let m = scratch.stft_mags(id, window, hop)?;
    Ok(scratch.value(m).clone())
}

/// Window energies of a plain tensor.
pub fn frame_energy_plain<S: Scalar>(x: &Tensor<S>, window: usize, hop: usize) -> Result<Tensor<S>> {
    let mut scratch = Tape::new();
    let id = scratch.constant(x.clone());
    let e = scratch.frame_energy(id, window, hop)?;
    Ok(scratch.value(e).clone())
}

/// The two terms of the single-resolution STFT loss: spectral convergence
/// `‖|Y|−|Ŷ|‖_F / ‖|Y|‖_F` and log-magnitude distance
/// `(1/L)·‖log|Y|−log|Ŷ|‖_1`, where L counts magnitude-matrix elements.
pub fn stft_loss_terms<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    window: usize,
    log_epsilon: f64,
) -> Result<(ValueId, ValueId)> {
    check_same_shape("stft_loss", tape, pred, target)?;
    let hop = SpectralConfig::hop(window);
    let target_mags = stft_mags_plain(target, window, hop)?;
    let pred_mags = tape.stft_mags(pred, window, hop)?;

    // ‖|Y|‖_F from the target, floored so a silent reference cannot divide
    // by zero (the numerator is exactly zero in that case anyway).
    let target_norm: S = {
        let s: S = target_mags.data().iter().map(|&m| m * m).sum();
        s.sqrt().max(S::from_f64(1e-30))
    };
    let tm = tape.constant(target_mags.clone());
    let diff = tape.sub(pred_mags, tm)?;
    let sq = tape.mul(diff, diff)?;
    let ssq = tape.sum(sq)?;
    let num = tape.sqrt_floored(ssq, S::from_f64(1e-12))?;
    let convergence = tape.scale(num, S::ONE / target_norm)?;

    let eps = S::from_f64(log_epsilon);
    let log_pred = tape.log_floored(pred_mags, eps)?;
    let log_target = Tensor::from_parts(
        target_mags.shape().to_vec(),
        target_mags.data().iter().map(|&m| m.max(eps).ln()).collect(),
    );
    let lt = tape.constant(log_target);
    let ldiff = tape.sub(log_pred, lt)?;
    let labs = tape.abs(ldiff)?;
    let log_term = tape.mean(labs)?;

    Ok((convergence, log_term))
}

/// Single-resolution STFT loss: convergence + log-magnitude terms.
pub fn stft_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    window: usize,
    log_epsilon: f64,
) -> Result<ValueId> {
    let (conv, log_term) = stft_loss_terms(tape, pred, target, window, log_epsilon)?;
    tape.add(conv, log_term)
}

/// Single-resolution energy ESR: mean over windows of `|Ê_k − E_k| / E_k`
/// with hop W/4. The denominator is floored; the numerator uses the raw
/// reference energy so a perfect prediction scores exactly zero.
pub fn eesr<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    window: usize,
    energy_floor: f64,
) -> Result<ValueId> {
    check_same_shape("eesr", tape, pred, target)?;
    let hop = SpectralConfig::hop(window);
    let target_energy = frame_energy_plain(target, window, hop)?;
    let floor = S::from_f64(energy_floor);
    let inv_floored = Tensor::from_parts(
        target_energy.shape().to_vec(),
        target_energy.data().iter().map(|&e| S::ONE / e.max(floor)).collect(),
    );
    let pred_energy = tape.frame_energy(pred, window, hop)?;
    let te = tape.constant(target_energy);
    let diff = tape.sub(pred_energy, te)?;
    let a = tape.abs(diff)?;
    let inv = tape.constant(inv_floored);
    let ratio = tape.mul(a, inv)?;
    tape.mean(ratio)
}

fn mean_over_windows<S: Scalar>(tape: &mut Tape<S>, terms: &[ValueId]) -> Result<ValueId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, S::ONE / S::from_f64(terms.len() as f64))
}

/// Multi-resolution STFT loss: mean of [`stft_loss`] over the window sizes.
pub fn mr_stft<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    config: &SpectralConfig,
) -> Result<ValueId> {
    let terms: Vec<ValueId> = config
        .window_sizes
        .iter()
        .map(|&w| stft_loss(tape, pred, target, w, config.log_epsilon))
        .collect::<Result<_>>()?;
    mean_over_windows(tape, &terms)
}

/// Multi-resolution energy ESR: mean of [`eesr`] over the window sizes.
pub fn mr_eesr<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    config: &SpectralConfig,
) -> Result<ValueId> {
    let terms: Vec<ValueId> = config
        .window_sizes
        .iter()
        .map(|&w| eesr(tape, pred, target, w, config.energy_floor))
        .collect::<Result<_>>()?;
    mean_over_windows(tape, &terms)
}

/// The full training loss. Returns the total node (for backward) and the
/// term values; the 100× factor balances the MAE term's magnitude.
pub fn combined_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    target: &Tensor<S>,
    config: &SpectralConfig,
) -> Result<(ValueId, LossBreakdown)> {
    let mae_id = mae(tape, pred, target)?;
    let esr_id = esr(tape, pred, target)?;
    let mr_stft_id = mr_stft(tape, pred, target, config)?;
    let mr_eesr_id = mr_eesr(tape, pred, target, config)?;

    let weighted_mae = tape.scale(mae_id, S::from_f64(100.0))?;
    let s1 = tape.add(weighted_mae, esr_id)?;
    let s2 = tape.add(s1, mr_stft_id)?;
    let total = tape.add(s2, mr_eesr_id)?;

    let mae_v = tape.value(mae_id).item()?.to_f64();
    let esr_v = tape.value(esr_id).item()?.to_f64();
    let mr_stft_v = tape.value(mr_stft_id).item()?.to_f64();
    let mr_eesr_v = tape.value(mr_eesr_id).item()?.to_f64();
    let breakdown = LossBreakdown {
        mae: mae_v,
        esr: esr_v,
        mr_stft: mr_stft_v,
        mr_eesr: mr_eesr_v,
        total: LossBreakdown::weighted_total(mae_v, esr_v, mr_stft_v, mr_eesr_v),
    };
    Ok((total, breakdown))
}
