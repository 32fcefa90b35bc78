//! Run orchestration: dataset materialization into training precision,
//! per-run seeding, single training runs, and the threaded grid sweep.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Result};

use sptmod_core::dataset::{materialize_item, DatasetSpec, SplitSet};
use sptmod_core::experiment::{CellKey, GridRunRecord, GridSpec};
use sptmod_core::losses::SpectralConfig;
use sptmod_core::model::{Spn, SpnConfig, Sptmod, SptmodConfig};
use sptmod_core::rng::Rng;
use sptmod_core::trainer::{train, AdamConfig, RunRecord, TrainConfig, TrainData, TrainItem};
use sptmod_core::Scalar;

use crate::SystemClock;

/// Knobs shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub adam: AdamConfig,
    pub patience_iterations: u64,
    pub max_iterations: u64,
    pub max_epochs: Option<u32>,
    pub spectral: SpectralConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            adam: AdamConfig::default(),
            patience_iterations: 76_800,
            max_iterations: 1_000_000,
            max_epochs: None,
            spectral: SpectralConfig::default(),
        }
    }
}

/// Materializes every item of a dataset into training precision, one at a
/// time (the f64 buffers are dropped as soon as they are cast). Items can
/// be trimmed to their leading seconds for desk-scale runs.
pub fn build_train_data<S: Scalar>(spec: &DatasetSpec, trim_seconds: Option<f64>) -> Result<TrainData<S>> {
    let mut items = Vec::with_capacity(spec.items.len());
    for index in 0..spec.items.len() {
        let mut item = materialize_item(spec, index);
        if let Some(seconds) = trim_seconds {
            let keep = (seconds * item.input.sample_rate as f64) as usize;
            item.input.samples.truncate(keep);
            item.target.samples.truncate(keep);
        }
        items.push(TrainItem::from_dataset_item(&item));
    }
    TrainData::new(items, 6).map_err(|e| anyhow!("{e}"))
}

/// Maps a split entry's item ids onto indices into the dataset order.
pub fn split_indices(
    spec: &DatasetSpec,
    splits: &SplitSet,
    entry: usize,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let find = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                spec.items
                    .iter()
                    .position(|item| &item.id == id)
                    .ok_or_else(|| anyhow!("split references unknown item `{id}`"))
            })
            .collect()
    };
    let e = splits
        .entries
        .get(entry)
        .ok_or_else(|| anyhow!("split index {entry} out of range ({} entries)", splits.entries.len()))?;
    Ok((find(&e.train)?, find(&e.validation)?, find(&e.test)?))
}

/// Deterministic per-run seed from the sweep seed and the run coordinates.
pub fn run_seed(base: u64, cell: CellKey, split: usize) -> u64 {
    Rng::seed_from(base)
        .derive(cell.n as u64)
        .derive(cell.b as u64)
        .derive(cell.l as u64)
        .derive(split as u64)
        .next_u64()
}

/// Trains one (cell, split) run: fresh model and SPN seeded from the run
/// coordinates, early-stopped on the streamed validation loss.
#[allow(clippy::too_many_arguments)]
pub fn run_single<S: Scalar>(
    model_config: &SptmodConfig,
    spn_config: &SpnConfig,
    data: &TrainData<S>,
    train_items: &[usize],
    val_items: &[usize],
    cell: CellKey,
    seed: u64,
    options: &RunOptions,
) -> Result<RunRecord> {
    let mut model = Sptmod::<S>::new(model_config.clone(), seed).map_err(|e| anyhow!("{e}"))?;
    let mut spn = Spn::<S>::new(spn_config.clone(), model_config, seed ^ 0x5bd1_e995).map_err(|e| anyhow!("{e}"))?;
    let config = TrainConfig {
        n: cell.n,
        batch: cell.b,
        seq_len: cell.l,
        adam: options.adam,
        patience_iterations: options.patience_iterations,
        max_iterations: options.max_iterations,
        max_epochs: options.max_epochs,
        seed,
        spectral: options.spectral.clone(),
    };
    let clock = SystemClock::new();
    train(&mut model, &mut spn, data, train_items, val_items, &config, &clock).map_err(|e| anyhow!("{e}"))
}

/// Runs a whole grid, fanning cells out over `workers` threads. Results
/// come back in the deterministic work-unit order regardless of thread
/// timing; per-run failures are recorded and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn run_grid_parallel<S: Scalar>(
    grid: &GridSpec,
    model_config: &SptmodConfig,
    spn_config: &SpnConfig,
    data: &TrainData<S>,
    spec: &DatasetSpec,
    splits: &SplitSet,
    options: &RunOptions,
    workers: usize,
) -> Result<Vec<GridRunRecord>> {
    grid.validate().map_err(|e| anyhow!("{e}"))?;
    let runs = grid.runs();
    let results: Mutex<Vec<Option<GridRunRecord>>> = Mutex::new(vec![None; runs.len()]);
    let next: AtomicUsize = AtomicUsize::new(0);

    let execute = |unit: usize| -> GridRunRecord {
        let (cell, split) = runs[unit];
        let run_id = GridRunRecord::id_for(cell, split);
        let outcome = split_indices(spec, splits, split).and_then(|(train_items, val_items, _)| {
            run_single(
                model_config,
                spn_config,
                data,
                &train_items,
                &val_items,
                cell,
                run_seed(grid.base_seed, cell, split),
                options,
            )
        });
        match outcome {
            Ok(record) => GridRunRecord {
                run_id,
                cell,
                split,
                record: Some(record),
                error: None,
            },
            Err(e) => GridRunRecord {
                run_id,
                cell,
                split,
                record: None,
                error: Some(format!("{e}")),
            },
        }
    };

    if workers <= 1 {
        let mut out = Vec::with_capacity(runs.len());
        for unit in 0..runs.len() {
            out.push(execute(unit));
        }
        return Ok(out);
    }

    std::thread::scope(|scope| {
        for _ in 0..workers.min(runs.len()) {
            scope.spawn(|| loop {
                let unit = next.fetch_add(1, Ordering::Relaxed);
                if unit >= runs.len() {
                    break;
                }
                let record = execute(unit);
                results.lock().expect("grid results poisoned")[unit] = Some(record);
            });
        }
    });
    let collected = results.into_inner().expect("grid results poisoned");
    Ok(collected.into_iter().map(|r| r.expect("every unit ran")).collect())
}
