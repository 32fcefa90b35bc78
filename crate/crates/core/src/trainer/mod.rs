//! The TBPTT optimization loop.
//!
//! Training proceeds in groups of N iterations over consecutive
//! sub-sequences of shuffled long windows. Iteration 0 runs padding-free:
//! the SPN consumes the first lookback samples (input and reference) and
//! predicts the initial LSTM states, the processor consumes the last
//! `l_nopad` samples and emits L outputs. Iterations 1..N-1 stream with
//! cached padding at length L. Weights update after every iteration; the
//! states and caches carried between iterations re-enter the next tape as
//! constants, which detaches their gradients. After N iterations the
//! context is discarded.

mod adam;
mod plan;

pub use adam::{AdamConfig, AdamState};
pub use plan::{plan_batches, EpochSchedule, TbpttPlan, WindowRef};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::clock::Clock;
use crate::dataset::DatasetItem;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossBreakdown, SpectralConfig};
use crate::model::{solve_lengths, ForwardPass, InitialStates, LengthPlan, RecurrentContext, Spn, Sptmod};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// One item held in training precision.
#[derive(Debug, Clone)]
pub struct TrainItem<S> {
    pub id: String,
    pub input: Vec<S>,
    pub target: Vec<S>,
    pub controls: Vec<S>,
}

impl<S: Scalar> TrainItem<S> {
    pub fn from_dataset_item(item: &DatasetItem) -> Self {
        TrainItem {
            id: item.id.clone(),
            input: item.input.samples.iter().map(|&v| S::from_f64(v)).collect(),
            target: item.target.samples.iter().map(|&v| S::from_f64(v)).collect(),
            controls: item.controls.values.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

/// All items of one dataset in training precision.
#[derive(Debug, Clone)]
pub struct TrainData<S> {
    pub items: Vec<TrainItem<S>>,
    pub num_controls: usize,
}

impl<S: Scalar> TrainData<S> {
    pub fn new(items: Vec<TrainItem<S>>, num_controls: usize) -> Result<Self> {
        for item in &items {
            if item.input.len() != item.target.len() {
                return Err(Error::Data(alloc::format!(
                    "item `{}`: input and target lengths differ",
                    item.id
                )));
            }
            if item.controls.len() < num_controls {
                return Err(Error::Data(alloc::format!(
                    "item `{}`: {} control values, expected {}",
                    item.id,
                    item.controls.len(),
                    num_controls
                )));
            }
        }
        Ok(TrainData { items, num_controls })
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Input,
    Target,
}

fn gather<S: Scalar>(
    data: &TrainData<S>,
    group: &[WindowRef],
    within: usize,
    len: usize,
    source: Source,
) -> Tensor<S> {
    let mut values = Vec::with_capacity(group.len() * len);
    for w in group {
        let item = &data.items[w.item];
        let signal = match source {
            Source::Input => &item.input,
            Source::Target => &item.target,
        };
        let start = w.offset + within;
        values.extend_from_slice(&signal[start..start + len]);
    }
    Tensor::from_parts(alloc::vec![group.len(), 1, len], values)
}

fn gather_controls<S: Scalar>(data: &TrainData<S>, group: &[WindowRef], num_controls: usize) -> Tensor<S> {
    let mut values = Vec::with_capacity(group.len() * num_controls);
    for w in group {
        values.extend_from_slice(&data.items[w.item].controls[..num_controls]);
    }
    Tensor::from_parts(alloc::vec![group.len(), num_controls], values)
}

/// Runs one TBPTT group: N iterations with an Adam update after each, SPN
/// warm-start on the first, cached continuation afterwards. Returns the
/// per-iteration loss breakdowns. Both parameter sets step on every
/// iteration (a single optimizer over the joint parameter vector).
#[allow(clippy::too_many_arguments)]
pub fn tbptt_group_step<S: Scalar>(
    model: &mut Sptmod<S>,
    spn: &mut Spn<S>,
    adam_model: &mut AdamState<S>,
    adam_spn: &mut AdamState<S>,
    adam_config: &AdamConfig,
    data: &TrainData<S>,
    group: &[WindowRef],
    length_plan: &LengthPlan,
    plan: &TbpttPlan,
    spectral: &SpectralConfig,
) -> Result<Vec<LossBreakdown>> {
    let l = plan.seq_len;
    let l_in0 = plan.first_input_len();
    let mut losses = Vec::with_capacity(plan.n);
    let mut ctx: Option<RecurrentContext<S>> = None;
    for k in 0..plan.n {
        let mut tape = Tape::new();
        let model_binding = model.bind(&mut tape);
        let spn_binding = spn.bind(&mut tape);
        let controls = tape.constant(gather_controls(data, group, data.num_controls));

        let (out, target, new_ctx) = if k == 0 {
            let lookback = plan.l_lookback;
            let spn_in = tape.constant(gather(data, group, 0, lookback, Source::Input));
            let spn_ref = tape.constant(gather(data, group, 0, lookback, Source::Target));
            let states = spn.predict(&mut tape, &spn_binding, spn_in, spn_ref, controls)?;
            let proc_in = tape.constant(gather(
                data,
                group,
                l_in0 - length_plan.l_nopad,
                length_plan.l_nopad,
                Source::Input,
            ));
            let (out, ctx1) = model.forward(
                &mut tape,
                &model_binding,
                proc_in,
                controls,
                ForwardPass::NoPad {
                    plan: length_plan,
                    states: InitialStates::Predicted(&states),
                },
            )?;
            let target = gather(data, group, l_in0 - l, l, Source::Target);
            (out, target, ctx1)
        } else {
            let start = l_in0 + (k - 1) * l;
            let x = tape.constant(gather(data, group, start, l, Source::Input));
            let carried = ctx.as_ref().expect("context exists after iteration 0");
            let (out, ctx1) = model.forward(&mut tape, &model_binding, x, controls, ForwardPass::Cached { ctx: carried })?;
            let target = gather(data, group, start, l, Source::Target);
            (out, target, ctx1)
        };

        let (loss, breakdown) = combined_loss(&mut tape, out, &target, spectral)?;
        let mut grads = tape.backward(loss)?;
        model.params_mut().accumulate(&model_binding, &mut grads);
        spn.params_mut().accumulate(&spn_binding, &mut grads);
        adam_model.step(model.params_mut(), adam_config);
        adam_spn.step(spn.params_mut(), adam_config);

        losses.push(breakdown);
        ctx = Some(new_ctx);
    }
    Ok(losses)
}

/// Validation modes: Windowed Target re-initializes states per window like
/// training; Streamed Target carries the context across the whole item like
/// deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationMode {
    Windowed,
    Streamed,
}

/// Combined loss of one prediction row against one target row, computed on
/// a scratch tape (no gradients).
fn row_loss<S: Scalar>(pred: &Tensor<S>, row: usize, target: &Tensor<S>, spectral: &SpectralConfig) -> Result<f64> {
    let l = pred.shape()[2];
    let pred_row = Tensor::from_parts(alloc::vec![1, 1, l], pred.data()[row * l..(row + 1) * l].to_vec());
    let target_row = Tensor::from_parts(alloc::vec![1, 1, l], target.data()[row * l..(row + 1) * l].to_vec());
    let mut scratch = Tape::new();
    let p = scratch.constant(pred_row);
    let (_, breakdown) = combined_loss(&mut scratch, p, &target_row, spectral)?;
    Ok(breakdown.total)
}

/// Mean combined validation loss over a subset of items.
///
/// Windowed: every long window is processed independently, warm-started by
/// the SPN, exactly as in training (windows batched for throughput, losses
/// averaged per window). Streamed: each item runs start to finish with a
/// persistent context — first buffer padding-free with SPN states, then
/// cached buffers of length L — and the loss is averaged over emitted
/// windows.
#[allow(clippy::too_many_arguments)]
pub fn validate<S: Scalar>(
    model: &Sptmod<S>,
    spn: &Spn<S>,
    data: &TrainData<S>,
    subset: &[usize],
    length_plan: &LengthPlan,
    plan: &TbpttPlan,
    spectral: &SpectralConfig,
    mode: ValidationMode,
) -> Result<f64> {
    let l = plan.seq_len;
    let l_in0 = plan.first_input_len();
    let mut total = 0.0f64;
    let mut count = 0usize;
    match mode {
        ValidationMode::Windowed => {
            let mut windows = Vec::new();
            for &item in subset {
                let len = data.items[item].len();
                if len < plan.long_len() {
                    continue;
                }
                let mut offset = 0;
                while offset + plan.long_len() <= len {
                    windows.push(WindowRef { item, offset });
                    offset += plan.step();
                }
            }
            for group in windows.chunks(plan.batch) {
                let mut tape = Tape::new();
                let model_binding = model.bind_constants(&mut tape);
                let spn_binding = spn.bind_constants(&mut tape);
                let controls = tape.constant(gather_controls(data, group, data.num_controls));
                let spn_in = tape.constant(gather(data, group, 0, plan.l_lookback, Source::Input));
                let spn_ref = tape.constant(gather(data, group, 0, plan.l_lookback, Source::Target));
                let states = spn.predict(&mut tape, &spn_binding, spn_in, spn_ref, controls)?;
                let proc_in = tape.constant(gather(
                    data,
                    group,
                    l_in0 - length_plan.l_nopad,
                    length_plan.l_nopad,
                    Source::Input,
                ));
                let (mut out, mut ctx) = model.forward(
                    &mut tape,
                    &model_binding,
                    proc_in,
                    controls,
                    ForwardPass::NoPad {
                        plan: length_plan,
                        states: InitialStates::Predicted(&states),
                    },
                )?;
                for k in 0..plan.n {
                    let start = if k == 0 { l_in0 - l } else { l_in0 + (k - 1) * l };
                    if k > 0 {
                        let x = tape.constant(gather(data, group, start, l, Source::Input));
                        let (o, c) = model.forward(&mut tape, &model_binding, x, controls, ForwardPass::Cached { ctx: &ctx })?;
                        out = o;
                        ctx = c;
                    }
                    let target = gather(data, group, start, l, Source::Target);
                    for row in 0..group.len() {
                        total += row_loss(tape.value(out), row, &target, spectral)?;
                        count += 1;
                    }
                }
            }
        }
        ValidationMode::Streamed => {
            for &item_idx in subset {
                let item = &data.items[item_idx];
                if item.len() < l_in0 {
                    continue;
                }
                let group = [WindowRef { item: item_idx, offset: 0 }];
                let mut tape = Tape::new();
                let model_binding = model.bind_constants(&mut tape);
                let spn_binding = spn.bind_constants(&mut tape);
                let controls_t = gather_controls(data, &group, data.num_controls);
                let controls = tape.constant(controls_t.clone());
                let spn_in = tape.constant(gather(data, &group, 0, plan.l_lookback, Source::Input));
                let spn_ref = tape.constant(gather(data, &group, 0, plan.l_lookback, Source::Target));
                let states = spn.predict(&mut tape, &spn_binding, spn_in, spn_ref, controls)?;
                let proc_in = tape.constant(gather(
                    data,
                    &group,
                    l_in0 - length_plan.l_nopad,
                    length_plan.l_nopad,
                    Source::Input,
                ));
                let (out, mut ctx) = model.forward(
                    &mut tape,
                    &model_binding,
                    proc_in,
                    controls,
                    ForwardPass::NoPad {
                        plan: length_plan,
                        states: InitialStates::Predicted(&states),
                    },
                )?;
                let target = gather(data, &group, l_in0 - l, l, Source::Target);
                total += row_loss(tape.value(out), 0, &target, spectral)?;
                count += 1;
                drop(tape);

                let mut pos = l_in0;
                while pos + l <= item.len() {
                    let mut tape = Tape::new();
                    let model_binding = model.bind_constants(&mut tape);
                    let controls = tape.constant(controls_t.clone());
                    let x = tape.constant(gather(data, &group, pos, l, Source::Input));
                    let (out, c) = model.forward(&mut tape, &model_binding, x, controls, ForwardPass::Cached { ctx: &ctx })?;
                    let target = gather(data, &group, pos, l, Source::Target);
                    total += row_loss(tape.value(out), 0, &target, spectral)?;
                    count += 1;
                    ctx = c;
                    pos += l;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Data(String::from("validation subset produced no windows")));
    }
    Ok(total / count as f64)
}

/// Run-level training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub adam: AdamConfig,
    /// Early stopping: halt when the streamed validation loss has not
    /// improved for this many iterations (weight updates).
    pub patience_iterations: u64,
    /// Hard iteration cap.
    pub max_iterations: u64,
    /// Optional epoch cap for desk-scale runs.
    pub max_epochs: Option<u32>,
    pub seed: u64,
    pub spectral: SpectralConfig,
}

impl TrainConfig {
    pub fn new(n: usize, batch: usize, seq_len: usize, seed: u64) -> Self {
        TrainConfig {
            n,
            batch,
            seq_len,
            adam: AdamConfig::default(),
            patience_iterations: 76_800,
            max_iterations: 1_000_000,
            max_epochs: None,
            seed,
            spectral: SpectralConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience_iterations >= self.max_iterations {
            return Err(Error::Config(alloc::format!(
                "patience {} must be below the iteration cap {}",
                self.patience_iterations,
                self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Cumulative weight updates at the end of this epoch.
    pub iterations: u64,
    pub train_loss: f64,
    pub wt_loss: f64,
    pub st_loss: f64,
    pub wall_seconds: f64,
}

/// Everything one training run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub iteration_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_st_loss: f64,
    pub best_iteration: u64,
    pub iterations: u64,
    pub sec_per_iter: f64,
    pub failed: bool,
    pub failure: Option<String>,
    /// Where the best-ST weights were persisted, filled by the caller that
    /// saves them.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

/// Trains a model/SPN pair on the given item split. The best-ST weights
/// are restored into `model` and `spn` when training ends. A NaN loss
/// marks the run failed in the record instead of crashing.
#[allow(clippy::too_many_arguments)]
pub fn train<S: Scalar>(
    model: &mut Sptmod<S>,
    spn: &mut Spn<S>,
    data: &TrainData<S>,
    train_items: &[usize],
    val_items: &[usize],
    config: &TrainConfig,
    clock: &dyn Clock,
) -> Result<RunRecord> {
    config.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::Config(String::from("training and validation subsets must be nonempty")));
    }
    let length_plan = solve_lengths(model.config(), config.seq_len)?;
    let plan = TbpttPlan::new(
        config.n,
        config.batch,
        config.seq_len,
        length_plan.l_nopad,
        spn.lookback(),
        crate::model::stream_granule(model.config()),
    )?;

    let train_lengths: Vec<usize> = train_items.iter().map(|&i| data.items[i].len()).collect();
    let seed_root = Rng::seed_from(config.seed);

    let mut record = RunRecord {
        config: config.clone(),
        iteration_losses: Vec::new(),
        epochs: Vec::new(),
        best_st_loss: f64::INFINITY,
        best_iteration: 0,
        iterations: 0,
        sec_per_iter: 0.0,
        failed: false,
        failure: None,
        checkpoint: None,
    };
    let mut best_params: Option<(crate::autodiff::ParamSet<S>, crate::autodiff::ParamSet<S>)> = None;
    let mut adam_model = AdamState::new(model.params());
    let mut adam_spn = AdamState::new(spn.params());
    let mut epoch: u32 = 0;
    let mut group_seconds = 0.0f64;

    'training: loop {
        let epoch_seed = seed_root.derive(epoch as u64).next_u64();
        let schedule = plan_batches(&train_lengths, &plan, epoch_seed);
        if schedule.groups.is_empty() {
            return Err(Error::Config(String::from(
                "no training windows: items are shorter than one long window or the batch never fills",
            )));
        }
        let epoch_start = clock.now();
        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_loss_count = 0usize;
        for group_local in &schedule.groups {
            // WindowRefs index the train subset; remap to dataset indices.
            let group: Vec<WindowRef> = group_local
                .iter()
                .map(|w| WindowRef {
                    item: train_items[w.item],
                    offset: w.offset,
                })
                .collect();
            let t0 = clock.now();
            let losses = match tbptt_group_step(
                model,
                spn,
                &mut adam_model,
                &mut adam_spn,
                &config.adam,
                data,
                &group,
                &length_plan,
                &plan,
                &config.spectral,
            ) {
                Ok(losses) => losses,
                Err(Error::NonFinite { op }) => {
                    record.failed = true;
                    record.failure = Some(alloc::format!("non-finite value in `{op}`"));
                    break 'training;
                }
                Err(e) => return Err(e),
            };
            group_seconds += clock.now() - t0;
            for b in losses {
                record.iterations += 1;
                record.iteration_losses.push(b.total);
                epoch_loss_sum += b.total;
                epoch_loss_count += 1;
            }
            if record.iterations >= config.max_iterations {
                break;
            }
        }

        let wt = validate(
            model,
            spn,
            data,
            val_items,
            &length_plan,
            &plan,
            &config.spectral,
            ValidationMode::Windowed,
        )?;
        let st = validate(
            model,
            spn,
            data,
            val_items,
            &length_plan,
            &plan,
            &config.spectral,
            ValidationMode::Streamed,
        )?;
        record.epochs.push(EpochRecord {
            epoch,
            iterations: record.iterations,
            train_loss: epoch_loss_sum / epoch_loss_count.max(1) as f64,
            wt_loss: wt,
            st_loss: st,
            wall_seconds: clock.now() - epoch_start,
        });
        if st < record.best_st_loss {
            record.best_st_loss = st;
            record.best_iteration = record.iterations;
            best_params = Some((model.params().clone(), spn.params().clone()));
        }

        let out_of_patience = record.iterations - record.best_iteration >= config.patience_iterations;
        let capped = record.iterations >= config.max_iterations;
        let epoch_capped = config.max_epochs.is_some_and(|m| epoch + 1 >= m);
        if out_of_patience || capped || epoch_capped {
            break;
        }
        epoch += 1;
    }

    if let Some((mp, sp)) = best_params {
        *model.params_mut() = mp;
        *spn.params_mut() = sp;
    }
    record.sec_per_iter = if record.iterations > 0 {
        group_seconds / record.iterations as f64
    } else {
        0.0
    };
    Ok(record)
}
