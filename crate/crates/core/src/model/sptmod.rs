//! The SPTMod effect processor: a modulation path of convolutional-recurrent
//! blocks computing time-varying gains, applied multiplicatively to the
//! audio path.
//!
//! The audio path performs amplitude modulation only — each block's gain
//! head scales it, nothing is ever added — so silence maps to silence,
//! which is the right contract for a compressor. The modulation path's own
//! binary sites use full scale-and-shift.
//!
//! Block wiring: dilated conv -> PReLU -> (left-crop) -> fork. The pooled
//! branch runs max-pool -> LSTM -> control-conditioned FiLM -> causal
//! interpolating upsample; three 1x1 heads then produce the modulation
//! scale/shift for the block output and the audio gain.

use alloc::vec::Vec;

use crate::autodiff::{ParamBinding, ParamId, ParamSet, Tape, Tensor, ValueId};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

use super::config::SptmodConfig;
use super::context::{BlockContext, RecurrentContext};
use super::init;
use super::lengths::LengthPlan;

/// How a padding-free pass seeds the recurrent states.
pub enum InitialStates<'a> {
    /// Zero LSTM states (warm-up style start).
    Fresh,
    /// Per-block `[B, 2H]` state tensors already on the tape, h columns
    /// first — the SPN's output slices. Gradients flow through them.
    Predicted(&'a [ValueId]),
}

/// Padding mode plus everything that mode needs.
pub enum ForwardPass<'a, S: Scalar> {
    /// Padding-free pass: input length must equal `plan.l_nopad`, output
    /// length is exactly `plan.l_out`.
    NoPad {
        plan: &'a LengthPlan,
        states: InitialStates<'a>,
    },
    /// Streamed continuation: input length equals output length and must be
    /// divisible by every pool size; the context must be primed.
    Cached { ctx: &'a RecurrentContext<S> },
}

struct BlockIds {
    conv_w: ParamId,
    conv_b: ParamId,
    prelu: ParamId,
    lstm_w_ih: ParamId,
    lstm_w_hh: ParamId,
    lstm_bias: ParamId,
    film_w1: ParamId,
    film_b1: ParamId,
    film_prelu: ParamId,
    film_w2: ParamId,
    film_b2: ParamId,
    mod_gamma_w: ParamId,
    mod_gamma_b: ParamId,
    mod_beta_w: ParamId,
    mod_beta_b: ParamId,
    audio_gain_w: ParamId,
    audio_gain_b: ParamId,
}

pub struct Sptmod<S: Scalar> {
    config: SptmodConfig,
    params: ParamSet<S>,
    blocks: Vec<BlockIds>,
}

impl<S: Scalar> Sptmod<S> {
    pub fn new(config: SptmodConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed);
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut in_channels = 1usize;
        for (j, b) in config.blocks.iter().enumerate() {
            let c = b.out_channels;
            let h = b.lstm_hidden;
            let name = |suffix: &str| alloc::format!("modblock.{j}.{suffix}");
            let (w_ih, w_hh, bias) = init::lstm::<S>(&mut rng, h, c);
            let ids = BlockIds {
                conv_w: params.add(&name("conv.weight"), init::conv_weight(&mut rng, c, in_channels, b.kernel))?,
                conv_b: params.add(&name("conv.bias"), init::conv_bias(&mut rng, c, in_channels, b.kernel))?,
                prelu: params.add(&name("prelu.slope"), init::prelu_slope(c))?,
                lstm_w_ih: params.add(&name("lstm.weight_ih"), w_ih)?,
                lstm_w_hh: params.add(&name("lstm.weight_hh"), w_hh)?,
                lstm_bias: params.add(&name("lstm.bias"), bias)?,
                film_w1: params.add(
                    &name("film.dense1.weight"),
                    init::dense_weight(&mut rng, b.film_hidden, config.num_controls),
                )?,
                film_b1: params.add(
                    &name("film.dense1.bias"),
                    init::dense_bias(&mut rng, b.film_hidden, config.num_controls),
                )?,
                film_prelu: params.add(&name("film.prelu.slope"), init::prelu_slope(b.film_hidden))?,
                film_w2: params.add(&name("film.dense2.weight"), init::dense_weight(&mut rng, 2 * h, b.film_hidden))?,
                film_b2: params.add(&name("film.dense2.bias"), init::dense_bias(&mut rng, 2 * h, b.film_hidden))?,
                mod_gamma_w: params.add(&name("mod_gamma.weight"), init::conv_weight(&mut rng, c, h, 1))?,
                mod_gamma_b: params.add(&name("mod_gamma.bias"), init::conv_bias(&mut rng, c, h, 1))?,
                mod_beta_w: params.add(&name("mod_beta.weight"), init::conv_weight(&mut rng, c, h, 1))?,
                mod_beta_b: params.add(&name("mod_beta.bias"), init::conv_bias(&mut rng, c, h, 1))?,
                audio_gain_w: params.add(&name("audio_gain.weight"), init::conv_weight(&mut rng, 1, h, 1))?,
                audio_gain_b: params.add(&name("audio_gain.bias"), init::conv_bias(&mut rng, 1, h, 1))?,
            };
            blocks.push(ids);
            in_channels = c;
        }
        Ok(Sptmod { config, params, blocks })
    }

    pub fn config(&self) -> &SptmodConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> ParamBinding {
        self.params.bind(tape)
    }

    /// Untracked binding for gradient-free passes.
    pub fn bind_constants(&self, tape: &mut Tape<S>) -> ParamBinding {
        self.params.bind_constants(tape)
    }

    /// Runs the processor over one buffer.
    ///
    /// `input` is a `[B, 1, T]` value already on the tape; `controls` a
    /// `[B, num_controls]` value. Returns the `[B, 1, L_out]` output and
    /// the value-copied (detached) context to carry into the next buffer.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        binding: &ParamBinding,
        input: ValueId,
        controls: ValueId,
        pass: ForwardPass<'_, S>,
    ) -> Result<(ValueId, RecurrentContext<S>)> {
        let (batch, in_c, t_in) = tape.value(input).dims3("sptmod_forward")?;
        if in_c != 1 {
            return Err(shape_err!("sptmod_forward", "input must be mono [B, 1, T], got {} channels", in_c));
        }
        let (bc, n_ctrl) = tape.value(controls).dims2("sptmod_forward")?;
        if bc != batch || n_ctrl != self.config.num_controls {
            return Err(shape_err!(
                "sptmod_forward",
                "controls shape {:?}, expected [{}, {}]",
                tape.value(controls).shape(),
                batch,
                self.config.num_controls
            ));
        }
        match &pass {
            ForwardPass::NoPad { plan, states } => {
                if t_in != plan.l_nopad {
                    return Err(shape_err!(
                        "sptmod_forward",
                        "no-pad input length {} but plan wants l_nopad {}",
                        t_in,
                        plan.l_nopad
                    ));
                }
                if plan.blocks.len() != self.config.blocks.len() {
                    return Err(Error::Config(alloc::string::String::from(
                        "length plan does not match the model architecture",
                    )));
                }
                if let InitialStates::Predicted(s) = states {
                    if s.len() != self.config.blocks.len() {
                        return Err(shape_err!(
                            "sptmod_forward",
                            "{} predicted state tensors for {} blocks",
                            s.len(),
                            self.config.blocks.len()
                        ));
                    }
                }
            }
            ForwardPass::Cached { ctx } => {
                if !ctx.is_primed() {
                    return Err(Error::Contract(alloc::string::String::from(
                        "cached mode requires a context primed by a previous pass",
                    )));
                }
                if ctx.batch() != batch {
                    return Err(shape_err!("sptmod_forward", "context batch {} vs input batch {}", ctx.batch(), batch));
                }
                for (j, b) in self.config.blocks.iter().enumerate() {
                    if t_in == 0 || t_in % b.pool != 0 {
                        return Err(Error::Contract(alloc::format!(
                            "cached buffer length {} is not a multiple of block {}'s pool size {}",
                            t_in,
                            j,
                            b.pool
                        )));
                    }
                }
            }
        }

        let mut audio = input;
        let mut modulation = input;
        let mut new_blocks = Vec::with_capacity(self.config.blocks.len());
        for (j, (bcfg, ids)) in self.config.blocks.iter().zip(&self.blocks).enumerate() {
            let h = bcfg.lstm_hidden;

            // Convolution, with the cache prepended when streaming.
            let conv_in = match &pass {
                ForwardPass::NoPad { .. } => modulation,
                ForwardPass::Cached { ctx } => {
                    let cache = tape.constant(ctx.blocks[j].conv_cache.clone());
                    tape.concat_time(cache, modulation)?
                }
            };
            let span = (bcfg.kernel - 1) * bcfg.dilation;
            let new_conv_cache = time_tail(tape.value(conv_in), span);
            let z = tape.conv1d(conv_in, binding.id(ids.conv_w), binding.id(ids.conv_b), bcfg.dilation)?;
            let z = tape.prelu(z, binding.id(ids.prelu))?;
            let z = match &pass {
                ForwardPass::NoPad { plan, .. } if plan.blocks[j].mod_crop > 0 => {
                    tape.crop_left(z, plan.blocks[j].mod_crop)?
                }
                _ => z,
            };

            // Pooled branch: frames -> LSTM -> FiLM -> upsample.
            let pooled = tape.max_pool(z, bcfg.pool)?;
            let frames = tape.value(pooled).shape()[2];
            let mut hc = match &pass {
                ForwardPass::NoPad { states: InitialStates::Fresh, .. } => {
                    tape.constant(Tensor::zeros(&[batch, 2 * h]))
                }
                ForwardPass::NoPad { states: InitialStates::Predicted(s), .. } => s[j],
                ForwardPass::Cached { ctx } => {
                    let b = &ctx.blocks[j];
                    tape.constant(concat_cols(&b.lstm_h, &b.lstm_c))
                }
            };
            let mut step_outputs = Vec::with_capacity(frames);
            for f in 0..frames {
                let x_f = tape.time_slice(pooled, f)?;
                hc = tape.lstm_step(
                    x_f,
                    hc,
                    binding.id(ids.lstm_w_ih),
                    binding.id(ids.lstm_w_hh),
                    binding.id(ids.lstm_bias),
                )?;
                step_outputs.push(tape.slice_cols(hc, 0, h)?);
            }
            let lstm_out = tape.assemble_time(&step_outputs)?;

            let d1 = tape.dense(controls, binding.id(ids.film_w1), binding.id(ids.film_b1))?;
            let act = tape.prelu(d1, binding.id(ids.film_prelu))?;
            let d2 = tape.dense(act, binding.id(ids.film_w2), binding.id(ids.film_b2))?;
            let gamma = tape.slice_cols(d2, 0, h)?;
            let beta = tape.slice_cols(d2, h, h)?;
            let conditioned = tape.film(lstm_out, gamma, beta)?;

            let prev = match &pass {
                ForwardPass::NoPad { .. } => None,
                ForwardPass::Cached { ctx } => Some(tape.constant(ctx.blocks[j].upsample_prev.clone())),
            };
            let new_upsample_prev = tail_two_frames(
                match &pass {
                    ForwardPass::Cached { ctx } => Some(&ctx.blocks[j].upsample_prev),
                    ForwardPass::NoPad { .. } => None,
                },
                tape.value(conditioned),
            );
            let up = tape.upsample_ramp(conditioned, bcfg.pool, prev)?;

            // 1x1 heads: scale/shift for the modulation path, gain for audio.
            let s_gamma = tape.conv1d(up, binding.id(ids.mod_gamma_w), binding.id(ids.mod_gamma_b), 1)?;
            let s_beta = tape.conv1d(up, binding.id(ids.mod_beta_w), binding.id(ids.mod_beta_b), 1)?;
            let s_gain = tape.conv1d(up, binding.id(ids.audio_gain_w), binding.id(ids.audio_gain_b), 1)?;
            let scaled = tape.mul(s_gamma, z)?;
            modulation = tape.add(scaled, s_beta)?;

            let audio_in = match &pass {
                ForwardPass::NoPad { plan, .. } if plan.blocks[j].audio_crop > 0 => {
                    tape.crop_left(audio, plan.blocks[j].audio_crop)?
                }
                _ => audio,
            };
            audio = tape.mul(audio_in, s_gain)?;

            let hc_val = tape.value(hc);
            new_blocks.push(BlockContext {
                lstm_h: cols_copy(hc_val, 0, h),
                lstm_c: cols_copy(hc_val, h, h),
                conv_cache: new_conv_cache,
                pool_residue: Tensor::zeros(&[batch, bcfg.out_channels, 0]),
                upsample_prev: new_upsample_prev,
            });
        }
        Ok((audio, RecurrentContext::primed(new_blocks)))
    }
}

/// Value copy of the trailing `n` time samples of a `[B, C, T]` tensor.
fn time_tail<S: Scalar>(t: &Tensor<S>, n: usize) -> Tensor<S> {
    let (b, c, len) = match *t.shape() {
        [b, c, len] => (b, c, len),
        _ => unreachable!("time_tail on rank-3 tensors only"),
    };
    debug_assert!(len >= n, "buffer shorter than its own cache");
    let mut data = Vec::with_capacity(b * c * n);
    for bc in 0..b * c {
        data.extend_from_slice(&t.data()[bc * len + (len - n)..(bc + 1) * len]);
    }
    Tensor::from_parts(alloc::vec![b, c, n], data)
}

/// Value copy of a `[B, F]` column range.
fn cols_copy<S: Scalar>(t: &Tensor<S>, start: usize, len: usize) -> Tensor<S> {
    let (b, f) = match *t.shape() {
        [b, f] => (b, f),
        _ => unreachable!("cols_copy on rank-2 tensors only"),
    };
    let mut data = Vec::with_capacity(b * len);
    for bi in 0..b {
        data.extend_from_slice(&t.data()[bi * f + start..bi * f + start + len]);
    }
    Tensor::from_parts(alloc::vec![b, len], data)
}

/// `[B, H]` + `[B, H]` -> `[B, 2H]` value concat (h columns then c).
fn concat_cols<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (bs, h) = match *a.shape() {
        [bs, h] => (bs, h),
        _ => unreachable!(),
    };
    let mut data = Vec::with_capacity(bs * 2 * h);
    for bi in 0..bs {
        data.extend_from_slice(&a.data()[bi * h..(bi + 1) * h]);
        data.extend_from_slice(&b.data()[bi * h..(bi + 1) * h]);
    }
    Tensor::from_parts(alloc::vec![bs, 2 * h], data)
}

/// The last two frames of the conceptual frame stream `prev ++ frames`,
/// as a `[B, C, 2]` tensor. A fresh pass has zero virtual history.
fn tail_two_frames<S: Scalar>(prev: Option<&Tensor<S>>, frames: &Tensor<S>) -> Tensor<S> {
    let (b, c, f) = match *frames.shape() {
        [b, c, f] => (b, c, f),
        _ => unreachable!(),
    };
    let mut data = Vec::with_capacity(b * c * 2);
    for bc in 0..b * c {
        let base = bc * f;
        let get = |j: isize| -> S {
            if j >= 0 {
                frames.data()[base + j as usize]
            } else {
                match prev {
                    Some(p) if p.shape()[2] == 2 => p.data()[bc * 2 + (j + 2) as usize],
                    _ => S::ZERO,
                }
            }
        };
        data.push(get(f as isize - 2));
        data.push(get(f as isize - 1));
    }
    Tensor::from_parts(alloc::vec![b, c, 2], data)
}
