//! The state prediction network: a convolutional classifier-shaped stack
//! that consumes a lookback window of the effect input and its reference
//! output and predicts the recurrent states the processor would hold after
//! processing it, replacing warm-up.

use alloc::vec::Vec;

use crate::autodiff::{ParamBinding, ParamId, ParamSet, Tape, ValueId};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

use super::config::{SpnConfig, SptmodConfig};
use super::init;
use super::lengths::spn_lookback;

struct SpnBlockIds {
    conv_w: ParamId,
    conv_b: ParamId,
    prelu: ParamId,
    film_w1: ParamId,
    film_b1: ParamId,
    film_prelu: ParamId,
    film_w2: ParamId,
    film_b2: ParamId,
}

pub struct Spn<S: Scalar> {
    config: SpnConfig,
    lookback: usize,
    num_controls: usize,
    /// Per-processor-block state widths (2·hidden each); the head output
    /// is their concatenation, sliced back apart by [`Spn::predict`].
    state_widths: Vec<usize>,
    params: ParamSet<S>,
    blocks: Vec<SpnBlockIds>,
    head_w: ParamId,
    head_b: ParamId,
}

impl<S: Scalar> Spn<S> {
    /// Builds an SPN sized for the given processor architecture.
    pub fn new(config: SpnConfig, model: &SptmodConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let mut rng = Rng::seed_from(seed);
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut in_channels = 2; // effect input and reference output, stacked
        for j in 0..config.num_blocks {
            let c = config.channels;
            let name = |suffix: &str| alloc::format!("spn.block.{j}.{suffix}");
            blocks.push(SpnBlockIds {
                conv_w: params.add(&name("conv.weight"), init::conv_weight(&mut rng, c, in_channels, config.kernel))?,
                conv_b: params.add(&name("conv.bias"), init::conv_bias(&mut rng, c, in_channels, config.kernel))?,
                prelu: params.add(&name("prelu.slope"), init::prelu_slope(c))?,
                film_w1: params.add(
                    &name("film.dense1.weight"),
                    init::dense_weight(&mut rng, config.film_hidden, model.num_controls),
                )?,
                film_b1: params.add(
                    &name("film.dense1.bias"),
                    init::dense_bias(&mut rng, config.film_hidden, model.num_controls),
                )?,
                film_prelu: params.add(&name("film.prelu.slope"), init::prelu_slope(config.film_hidden))?,
                film_w2: params.add(&name("film.dense2.weight"), init::dense_weight(&mut rng, 2 * c, config.film_hidden))?,
                film_b2: params.add(&name("film.dense2.bias"), init::dense_bias(&mut rng, 2 * c, config.film_hidden))?,
            });
            in_channels = c;
        }
        let total_state: usize = model.state_widths().iter().sum();
        let head_w = params.add("spn.head.weight", init::dense_weight(&mut rng, total_state, config.channels))?;
        let head_b = params.add("spn.head.bias", init::dense_bias(&mut rng, total_state, config.channels))?;
        Ok(Spn {
            lookback: spn_lookback(&config),
            num_controls: model.num_controls,
            state_widths: model.state_widths(),
            config,
            params,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &SpnConfig {
        &self.config
    }

    /// Samples of input (and reference) the network consumes.
    pub fn lookback(&self) -> usize {
        self.lookback
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

    /// Predicts initial LSTM states from a lookback window.
    ///
    /// `input` and `reference` are `[B, 1, lookback]` values on the tape.
    /// Returns one `[B, 2H_j]` tensor per processor block (h columns then
    /// c), the layout [`super::sptmod::InitialStates::Predicted`] expects.
    pub fn predict(
        &self,
        tape: &mut Tape<S>,
        binding: &ParamBinding,
        input: ValueId,
        reference: ValueId,
        controls: ValueId,
    ) -> Result<Vec<ValueId>> {
        for (name, id) in [("input", input), ("reference", reference)] {
            let (_, c, t) = tape.value(id).dims3("spn_predict")?;
            if c != 1 || t != self.lookback {
                return Err(shape_err!(
                    "spn_predict",
                    "{} shape {:?}, expected [B, 1, {}]",
                    name,
                    tape.value(id).shape(),
                    self.lookback
                ));
            }
        }
        let pre_dense = self.features(tape, binding, input, reference, controls)?;
        let vector = tape.dense(pre_dense, binding.id(self.head_w), binding.id(self.head_b))?;
        let mut states = Vec::with_capacity(self.state_widths.len());
        let mut offset = 0;
        for &w in &self.state_widths {
            states.push(tape.slice_cols(vector, offset, w)?);
            offset += w;
        }
        Ok(states)
    }

    /// The convolutional stack up to (not including) the head: reduces the
    /// stacked lookback pair to a single frame and returns it as `[B, C]`.
    pub fn features(
        &self,
        tape: &mut Tape<S>,
        binding: &ParamBinding,
        input: ValueId,
        reference: ValueId,
        controls: ValueId,
    ) -> Result<ValueId> {
        let mut x = tape.stack_channels(input, reference)?;
        for ids in &self.blocks {
            let z = tape.conv1d(x, binding.id(ids.conv_w), binding.id(ids.conv_b), 1)?;
            let z = tape.prelu(z, binding.id(ids.prelu))?;
            let pooled = tape.max_pool(z, self.config.pool)?;
            let d1 = tape.dense(controls, binding.id(ids.film_w1), binding.id(ids.film_b1))?;
            let act = tape.prelu(d1, binding.id(ids.film_prelu))?;
            let d2 = tape.dense(act, binding.id(ids.film_w2), binding.id(ids.film_b2))?;
            let gamma = tape.slice_cols(d2, 0, self.config.channels)?;
            let beta = tape.slice_cols(d2, self.config.channels, self.config.channels)?;
            x = tape.film(pooled, gamma, beta)?;
        }
        let (b, c, t) = tape.value(x).dims3("spn_predict")?;
        if t != 1 {
            return Err(shape_err!(
                "spn_predict",
                "expected one frame before the head, got {} (lookback mismatch)",
                t
            ));
        }
        tape.reshape(x, &[b, c])
    }

    pub fn num_controls(&self) -> usize {
        self.num_controls
    }
}
