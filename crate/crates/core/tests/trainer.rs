//! Trainer contracts: TBPTT detachment via the constant-injection oracle,
//! group-step geometry, determinism, early stopping, and divergence
//! handling.

use sptmod_core::autodiff::{Tape, Tensor};
use sptmod_core::clock::NullClock;
use sptmod_core::losses::{combined_loss, SpectralConfig};
use sptmod_core::model::{
    solve_lengths, BlockContext, ForwardPass, InitialStates, ModBlockConfig, PresetTag,
    RecurrentContext, Spn, SpnConfig, Sptmod, SptmodConfig,
};
use sptmod_core::rng::Rng;
use sptmod_core::trainer::{
    plan_batches, tbptt_group_step, train, validate, AdamConfig, AdamState, TbpttPlan, TrainConfig,
    TrainData, TrainItem, ValidationMode, WindowRef,
};

fn mini_model_config() -> SptmodConfig {
    SptmodConfig {
        blocks: vec![
            ModBlockConfig {
                out_channels: 3,
                kernel: 3,
                dilation: 1,
                pool: 4,
                lstm_hidden: 3,
                film_hidden: 3,
            },
            ModBlockConfig {
                out_channels: 2,
                kernel: 2,
                dilation: 1,
                pool: 2,
                lstm_hidden: 2,
                film_hidden: 3,
            },
        ],
        num_controls: 2,
        preset: PresetTag::Custom,
    }
}

fn mini_spn_config() -> SpnConfig {
    SpnConfig {
        num_blocks: 2,
        channels: 3,
        kernel: 4,
        pool: 4,
        film_hidden: 3,
    }
}

/// Tiny spectral config so short windows carry all four loss terms.
fn mini_spectral() -> SpectralConfig {
    SpectralConfig {
        window_sizes: vec![8, 16],
        log_epsilon: 1e-8,
        energy_floor: 1e-12,
    }
}

fn random_items(rng: &mut Rng, count: usize, len: usize) -> TrainData<f64> {
    let items = (0..count)
        .map(|i| TrainItem {
            id: format!("item-{i}"),
            input: (0..len).map(|_| rng.range(-0.8, 0.8)).collect(),
            target: (0..len).map(|_| rng.range(-0.8, 0.8)).collect(),
            controls: vec![rng.uniform(), rng.uniform()],
        })
        .collect();
    TrainData::new(items, 2).unwrap()
}

struct Setup {
    model: Sptmod<f64>,
    spn: Spn<f64>,
    data: TrainData<f64>,
    plan: TbpttPlan,
    length_plan: sptmod_core::model::LengthPlan,
    spectral: SpectralConfig,
}

fn setup(seed: u64, n: usize, batch: usize) -> Setup {
    let config = mini_model_config();
    let seq_len = 32;
    let length_plan = solve_lengths(&config, seq_len).unwrap();
    let model = Sptmod::new(config.clone(), seed).unwrap();
    let spn = Spn::new(mini_spn_config(), &config, seed + 1).unwrap();
    let plan = TbpttPlan::new(
        n,
        batch,
        seq_len,
        length_plan.l_nopad,
        spn.lookback(),
        sptmod_core::model::stream_granule(&config),
    )
    .unwrap();
    let mut rng = Rng::seed_from(seed + 2);
    let item_len = plan.long_len() + 3 * plan.step();
    let data = random_items(&mut rng, 4, item_len);
    Setup {
        model,
        spn,
        data,
        plan,
        length_plan,
        spectral: mini_spectral(),
    }
}

/// Forward one group without updates, returning the carried context before
/// iteration `upto` and the iteration input offsets.
fn context_before_iteration(s: &Setup, group: &[WindowRef], upto: usize) -> RecurrentContext<f64> {
    let l = s.plan.seq_len;
    let l_in0 = s.plan.first_input_len();
    let gather = |within: usize, len: usize, target: bool| -> Tensor<f64> {
        let mut v = Vec::new();
        for w in group {
            let item = &s.data.items[w.item];
            let sig = if target { &item.target } else { &item.input };
            v.extend_from_slice(&sig[w.offset + within..w.offset + within + len]);
        }
        Tensor::new(&[group.len(), 1, len], v).unwrap()
    };
    let controls = {
        let mut v = Vec::new();
        for w in group {
            v.extend_from_slice(&s.data.items[w.item].controls);
        }
        Tensor::new(&[group.len(), 2], v).unwrap()
    };

    let mut tape = Tape::new();
    let mb = s.model.bind_constants(&mut tape);
    let sb = s.spn.bind_constants(&mut tape);
    let c = tape.constant(controls.clone());
    let spn_in = tape.constant(gather(0, s.plan.l_lookback, false));
    let spn_ref = tape.constant(gather(0, s.plan.l_lookback, true));
    let states = s.spn.predict(&mut tape, &sb, spn_in, spn_ref, c).unwrap();
    let proc_in = tape.constant(gather(l_in0 - s.length_plan.l_nopad, s.length_plan.l_nopad, false));
    let (_, mut ctx) = s
        .model
        .forward(
            &mut tape,
            &mb,
            proc_in,
            c,
            ForwardPass::NoPad {
                plan: &s.length_plan,
                states: InitialStates::Predicted(&states),
            },
        )
        .unwrap();
    for k in 1..upto {
        let start = l_in0 + (k - 1) * l;
        let mut tape = Tape::new();
        let mb = s.model.bind_constants(&mut tape);
        let c = tape.constant(controls.clone());
        let x = tape.constant(gather(start, l, false));
        let (_, next) = s
            .model
            .forward(&mut tape, &mb, x, c, ForwardPass::Cached { ctx: &ctx })
            .unwrap();
        ctx = next;
    }
    ctx
}

/// Parameter gradients of iteration `k` of a group, given a carried context.
fn iteration_gradients(s: &Setup, group: &[WindowRef], k: usize, ctx: &RecurrentContext<f64>) -> Vec<Vec<f64>> {
    let l = s.plan.seq_len;
    let l_in0 = s.plan.first_input_len();
    let start = l_in0 + (k - 1) * l;
    let gather = |within: usize, len: usize, target: bool| -> Tensor<f64> {
        let mut v = Vec::new();
        for w in group {
            let item = &s.data.items[w.item];
            let sig = if target { &item.target } else { &item.input };
            v.extend_from_slice(&sig[w.offset + within..w.offset + within + len]);
        }
        Tensor::new(&[group.len(), 1, len], v).unwrap()
    };
    let controls = {
        let mut v = Vec::new();
        for w in group {
            v.extend_from_slice(&s.data.items[w.item].controls);
        }
        Tensor::new(&[group.len(), 2], v).unwrap()
    };
    let mut tape = Tape::new();
    let mb = s.model.bind(&mut tape);
    let c = tape.constant(controls);
    let x = tape.constant(gather(start, l, false));
    let (out, _) = s
        .model
        .forward(&mut tape, &mb, x, c, ForwardPass::Cached { ctx })
        .unwrap();
    let target = gather(start, l, true);
    let (loss, _) = combined_loss(&mut tape, out, &target, &s.spectral).unwrap();
    let grads = tape.backward(loss).unwrap();
    mb.value_ids()
        .iter()
        .map(|&id| grads.get(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect()
}

#[test]
fn detachment_constant_injection_oracle() {
    // For 20 random groups with N in {2, 3}: gradients of iteration k >= 1
    // computed with the pipeline's carried context equal gradients with the
    // same values re-injected as brand-new constant tensors.
    let mut rng = Rng::seed_from(0xD7);
    for trial in 0..20 {
        let n = 2 + (trial % 2);
        let s = setup(1000 + trial as u64, n, 2);
        let lengths = s.data.lengths();
        let schedule = plan_batches(&lengths, &s.plan, rng.next_u64());
        let group = schedule.groups[0].clone();
        let k = 1 + (trial % (n - 1).max(1)).min(n - 2);

        let ctx = context_before_iteration(&s, &group, k);
        let grads_carried = iteration_gradients(&s, &group, k, &ctx);

        // Re-inject every carried value as a freshly allocated constant.
        let injected = RecurrentContext::from_blocks(
            ctx.blocks
                .iter()
                .map(|b| BlockContext {
                    lstm_h: Tensor::new(b.lstm_h.shape(), b.lstm_h.data().to_vec()).unwrap(),
                    lstm_c: Tensor::new(b.lstm_c.shape(), b.lstm_c.data().to_vec()).unwrap(),
                    conv_cache: Tensor::new(b.conv_cache.shape(), b.conv_cache.data().to_vec()).unwrap(),
                    pool_residue: b.pool_residue.clone(),
                    upsample_prev: Tensor::new(b.upsample_prev.shape(), b.upsample_prev.data().to_vec())
                        .unwrap(),
                })
                .collect(),
        );
        let grads_injected = iteration_gradients(&s, &group, k, &injected);

        let mut max_diff = 0.0f64;
        for (a, b) in grads_carried.iter().zip(&grads_injected) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
        assert!(max_diff < 1e-12, "trial {trial}: constant-injection diff {max_diff}");
    }
}

#[test]
fn group_step_advances_optimizer_by_n() {
    for n in [1usize, 2, 3] {
        let mut s = setup(7, n, 2);
        let schedule = plan_batches(&s.data.lengths(), &s.plan, 0);
        let group = schedule.groups[0].clone();
        let mut adam_model = AdamState::new(s.model.params());
        let mut adam_spn = AdamState::new(s.spn.params());
        let losses = tbptt_group_step(
            &mut s.model,
            &mut s.spn,
            &mut adam_model,
            &mut adam_spn,
            &AdamConfig::default(),
            &s.data,
            &group,
            &s.length_plan,
            &s.plan,
            &s.spectral,
        )
        .unwrap();
        assert_eq!(losses.len(), n);
        assert_eq!(adam_model.steps(), n as u64);
        assert_eq!(adam_spn.steps(), n as u64);
    }
}

#[test]
fn group_losses_depend_only_on_group_and_weights() {
    // With the learning rate at zero, weights never change, so processing
    // groups in any order yields bit-identical per-group losses.
    let zero_lr = AdamConfig {
        learning_rate: 0.0,
        ..AdamConfig::default()
    };
    let run_order = |order: &[usize]| -> Vec<f64> {
        let mut s = setup(21, 2, 1);
        let schedule = plan_batches(&s.data.lengths(), &s.plan, 5);
        let mut out = vec![0.0; schedule.groups.len()];
        let mut adam_model = AdamState::new(s.model.params());
        let mut adam_spn = AdamState::new(s.spn.params());
        for &g in order {
            let losses = tbptt_group_step(
                &mut s.model,
                &mut s.spn,
                &mut adam_model,
                &mut adam_spn,
                &zero_lr,
                &s.data,
                &schedule.groups[g],
                &s.length_plan,
                &s.plan,
                &s.spectral,
            )
            .unwrap();
            out[g] = losses.iter().map(|b| b.total).sum();
        }
        out
    };
    let forward = run_order(&[0, 1, 2, 3]);
    let backward = run_order(&[3, 2, 1, 0]);
    assert_eq!(forward, backward);
}

#[test]
fn training_is_deterministic_per_seed() {
    let run = || {
        let mut s = setup(33, 2, 2);
        let mut config = TrainConfig::new(2, 2, 32, 99);
        config.spectral = s.spectral.clone();
        config.max_epochs = Some(2);
        config.patience_iterations = 10_000;
        config.max_iterations = 100_000;
        train(
            &mut s.model,
            &mut s.spn,
            &s.data,
            &[0, 1],
            &[2],
            &config,
            &NullClock,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert!(!a.iteration_losses.is_empty());
    assert_eq!(a.iteration_losses, b.iteration_losses);
    assert_eq!(
        a.epochs.iter().map(|e| (e.wt_loss, e.st_loss)).collect::<Vec<_>>(),
        b.epochs.iter().map(|e| (e.wt_loss, e.st_loss)).collect::<Vec<_>>()
    );
}

#[test]
fn best_checkpoint_matches_min_recorded_st_loss() {
    let mut s = setup(44, 2, 2);
    let mut config = TrainConfig::new(2, 2, 32, 7);
    config.spectral = s.spectral.clone();
    config.max_epochs = Some(3);
    config.patience_iterations = 10_000;
    config.max_iterations = 100_000;
    let record = train(
        &mut s.model,
        &mut s.spn,
        &s.data,
        &[0, 1],
        &[2],
        &config,
        &NullClock,
    )
    .unwrap();
    let min_st = record.epochs.iter().map(|e| e.st_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(record.best_st_loss, min_st);
    // The restored weights reproduce the recorded best ST loss exactly.
    let st_now = validate(
        &s.model,
        &s.spn,
        &s.data,
        &[2],
        &s.length_plan,
        &s.plan,
        &s.spectral,
        ValidationMode::Streamed,
    )
    .unwrap();
    assert_eq!(st_now, record.best_st_loss);
}

#[test]
fn wt_and_st_agree_on_single_window_items() {
    // When one window spans everything the item offers, both modes process
    // the same audio with the same warm start.
    let s = setup(55, 2, 1);
    let mut data = s.data.clone();
    let keep = s.plan.long_len();
    for item in &mut data.items {
        item.input.truncate(keep);
        item.target.truncate(keep);
    }
    let wt = validate(
        &s.model,
        &s.spn,
        &data,
        &[0],
        &s.length_plan,
        &s.plan,
        &s.spectral,
        ValidationMode::Windowed,
    )
    .unwrap();
    let st = validate(
        &s.model,
        &s.spn,
        &data,
        &[0],
        &s.length_plan,
        &s.plan,
        &s.spectral,
        ValidationMode::Streamed,
    )
    .unwrap();
    assert!((wt - st).abs() < 1e-12, "WT {wt} vs ST {st}");
}

#[test]
fn warmup_and_spn_seeding_gap_is_measured_not_asserted() {
    // Streamed inference can be seeded by the SPN or by a warm-up pass;
    // they agree only for a perfectly trained SPN. This measures the gap
    // on an untrained pair and only sanity-checks that both paths produce
    // finite losses.
    let s = setup(88, 2, 1);
    let item = 0usize;
    let it = &s.data.items[item];
    let controls = Tensor::new(&[1, 2], it.controls.clone()).unwrap();
    let l = s.plan.seq_len;
    let l_in0 = s.plan.first_input_len();

    let stream_loss = |ctx0: RecurrentContext<f64>, start: usize| -> f64 {
        let mut ctx = ctx0;
        let mut total = 0.0;
        let mut count = 0;
        let mut pos = start;
        while pos + l <= it.len() {
            let mut tape = Tape::new();
            let mb = s.model.bind_constants(&mut tape);
            let c = tape.constant(controls.clone());
            let x = tape.constant(Tensor::new(&[1, 1, l], it.input[pos..pos + l].to_vec()).unwrap());
            let (out, next) = s
                .model
                .forward(&mut tape, &mb, x, c, ForwardPass::Cached { ctx: &ctx })
                .unwrap();
            let target = Tensor::new(&[1, 1, l], it.target[pos..pos + l].to_vec()).unwrap();
            let mut scratch = Tape::new();
            let p = scratch.constant(tape.value(out).clone());
            let (_, b) = combined_loss(&mut scratch, p, &target, &s.spectral).unwrap();
            total += b.total;
            count += 1;
            ctx = next;
            pos += l;
        }
        total / count as f64
    };

    // Warm-up seeding: run the first l_nopad samples padding-free.
    let warmup = Tensor::new(&[1, 1, s.length_plan.l_nopad], it.input[..s.length_plan.l_nopad].to_vec()).unwrap();
    let warm_ctx =
        sptmod_core::model::make_cached_context(&s.model, &s.length_plan, &warmup, &controls).unwrap();
    let warm_loss = stream_loss(warm_ctx, s.length_plan.l_nopad);

    // SPN seeding: predicted states, then the same padding-free buffer.
    let spn_ctx = {
        let mut tape = Tape::new();
        let mb = s.model.bind_constants(&mut tape);
        let sb = s.spn.bind_constants(&mut tape);
        let c = tape.constant(controls.clone());
        let spn_in = tape.constant(Tensor::new(&[1, 1, s.plan.l_lookback], it.input[..s.plan.l_lookback].to_vec()).unwrap());
        let spn_ref = tape.constant(Tensor::new(&[1, 1, s.plan.l_lookback], it.target[..s.plan.l_lookback].to_vec()).unwrap());
        let states = s.spn.predict(&mut tape, &sb, spn_in, spn_ref, c).unwrap();
        let x = tape.constant(Tensor::new(&[1, 1, s.length_plan.l_nopad], it.input[l_in0 - s.length_plan.l_nopad..l_in0].to_vec()).unwrap());
        let (_, ctx) = s
            .model
            .forward(
                &mut tape,
                &mb,
                x,
                c,
                ForwardPass::NoPad {
                    plan: &s.length_plan,
                    states: InitialStates::Predicted(&states),
                },
            )
            .unwrap();
        ctx
    };
    let spn_loss = stream_loss(spn_ctx, l_in0);

    assert!(warm_loss.is_finite() && spn_loss.is_finite());
    println!(
        "seeding gap (untrained SPN): warm-up streamed loss {warm_loss:.4}, SPN streamed loss {spn_loss:.4}, gap {:+.4}",
        spn_loss - warm_loss
    );
}

#[test]
fn diverging_run_is_marked_failed_not_crashed() {
    let mut s = setup(66, 1, 2);
    let mut config = TrainConfig::new(1, 2, 32, 3);
    config.spectral = s.spectral.clone();
    config.max_epochs = Some(2);
    config.patience_iterations = 10_000;
    config.max_iterations = 100_000;
    // An absurd learning rate overflows the parameters within a few steps.
    config.adam.learning_rate = 1e300;
    let record = train(
        &mut s.model,
        &mut s.spn,
        &s.data,
        &[0, 1],
        &[2],
        &config,
        &NullClock,
    )
    .unwrap();
    assert!(record.failed);
    assert!(record.failure.is_some());
}
