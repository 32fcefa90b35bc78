//! `sptmod` — training and evaluation engine for streamable
//! convolutional-recurrent audio effect models.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sptmod_cli::{checkpoint, records, runner, wav};
use sptmod_core::autodiff::{Tape, Tensor};
use sptmod_core::dataset::{
    build_dataset, make_splits, materialize_item, ControlVector, DatasetKind, DatasetSpec, SplitSet,
};
use sptmod_core::experiment::{aggregate, GridRunRecord, GridSpec};
use sptmod_core::model::{
    solve_lengths, spn_lookback, ForwardPass, InitialStates, RecurrentContext, Spn, SpnConfig,
    Sptmod, SptmodConfig,
};
use sptmod_core::trainer::AdamConfig;
use sptmod_core::Scalar;

#[derive(Parser)]
#[command(
    name = "sptmod",
    version,
    about = "Streamable convolutional-recurrent audio effect modeling: datasets, TBPTT training, grid sweeps, streamed inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    Single,
    Double,
}

#[derive(Args, Debug, Clone)]
struct RunFlags {
    /// Learning rate.
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Early-stopping patience in iterations (weight updates).
    #[arg(long, default_value_t = 76_800)]
    patience: u64,
    /// Hard iteration cap.
    #[arg(long, default_value_t = 1_000_000)]
    max_iterations: u64,
    /// Optional epoch cap for desk-scale runs.
    #[arg(long)]
    max_epochs: Option<u32>,
    /// Trim every item to its first SECONDS of audio (desk-scale runs).
    #[arg(long)]
    trim_seconds: Option<f64>,
}

impl RunFlags {
    fn options(&self) -> runner::RunOptions {
        runner::RunOptions {
            adam: AdamConfig::with_learning_rate(self.lr),
            patience_iterations: self.patience,
            max_iterations: self.max_iterations,
            max_epochs: self.max_epochs,
            spectral: Default::default(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset and write it as WAV files plus a JSON manifest.
    GenerateDataset {
        /// snapshot | threshold-ratio | full
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the padding-free input length and crop sizes for a preset.
    SolveLengths {
        /// sptmod24 | sptmod25 | mini
        #[arg(long)]
        preset: String,
        #[arg(long)]
        l_out: usize,
        #[arg(long, default_value_t = 6)]
        controls: usize,
    },
    /// Train one model on one cross-validation split.
    Train {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        b: usize,
        #[arg(long, default_value_t = 16_384)]
        l: usize,
        /// Which of the ten splits to train on.
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Precision::Single)]
        precision: Precision,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Sweep the Cartesian (N, B, L) grid over several splits.
    Grid {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        dataset: String,
        /// Repeatable: -n 1 -n 2 ...
        #[arg(short = 'n', long = "n", required = true)]
        n: Vec<usize>,
        #[arg(short = 'b', long = "b", required = true)]
        b: Vec<usize>,
        #[arg(short = 'l', long = "l", required = true)]
        l: Vec<usize>,
        /// Excluded (B, L) pairs, written BxL, e.g. --exclude 128x32768.
        #[arg(long)]
        exclude: Vec<String>,
        /// Number of train/validation/test splits to run per cell.
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Precision::Single)]
        precision: Precision,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Aggregate a records.jsonl into median/MAD tables.
    Aggregate {
        /// Path to records.jsonl (grid.json must sit next to it).
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a WAV through a trained checkpoint.
    Infer {
        /// Checkpoint base path (without .json/.bin extension).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Normalized control values, comma separated, each in [0, 1].
        #[arg(long)]
        controls: String,
        /// Streamed buffer size in output samples.
        #[arg(long, default_value_t = 4096)]
        chunk: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateDataset { dataset, seed, out } => generate_dataset(&dataset, seed, &out),
        Command::SolveLengths { preset, l_out, controls } => solve_lengths_cmd(&preset, l_out, controls),
        Command::Train {
            preset,
            dataset,
            n,
            b,
            l,
            split,
            seed,
            out,
            precision,
            flags,
        } => match precision {
            Precision::Single => train_cmd::<f32>(&preset, &dataset, n, b, l, split, seed, &out, &flags),
            Precision::Double => train_cmd::<f64>(&preset, &dataset, n, b, l, split, seed, &out, &flags),
        },
        Command::Grid {
            preset,
            dataset,
            n,
            b,
            l,
            exclude,
            splits,
            seed,
            out,
            precision,
            workers,
            flags,
        } => {
            let grid = GridSpec {
                n_values: n,
                b_values: b,
                l_values: l,
                excluded: exclude.iter().map(|s| parse_exclude(s)).collect::<Result<_>>()?,
                splits,
                base_seed: seed,
            };
            match precision {
                Precision::Single => grid_cmd::<f32>(&preset, &dataset, grid, seed, &out, workers, &flags),
                Precision::Double => grid_cmd::<f64>(&preset, &dataset, grid, seed, &out, workers, &flags),
            }
        }
        Command::Aggregate { records, out } => aggregate_cmd(&records, &out),
        Command::Infer {
            checkpoint,
            input,
            output,
            controls,
            chunk,
        } => infer_cmd(&checkpoint, &input, &output, &controls, chunk),
    }
}

fn parse_exclude(s: &str) -> Result<(usize, usize)> {
    let (b, l) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("exclusions are written BxL, got `{s}`"))?;
    Ok((b.trim().parse()?, l.trim().parse()?))
}

fn parse_controls(s: &str) -> Result<ControlVector> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad control `{v}`: {e}")))
        .collect::<Result<_>>()?;
    ControlVector::new(values).map_err(|e| anyhow!("{e}"))
}

fn configs_for(preset: &str) -> Result<(SptmodConfig, SpnConfig)> {
    let model = SptmodConfig::preset_by_name(preset, 6).map_err(|e| anyhow!("{e}"))?;
    let spn = SpnConfig::for_preset(preset).map_err(|e| anyhow!("{e}"))?;
    Ok((model, spn))
}

fn generate_dataset(dataset: &str, seed: u64, out: &Path) -> Result<()> {
    let kind = DatasetKind::parse(dataset).map_err(|e| anyhow!("{e}"))?;
    let spec = build_dataset(kind, seed).map_err(|e| anyhow!("{e}"))?;
    fs::create_dir_all(out)?;

    #[derive(serde::Serialize)]
    struct ManifestEntry<'a> {
        id: &'a str,
        controls: &'a ControlVector,
        settings: &'a sptmod_core::dataset::CompressorSettings,
        input_path: String,
        target_path: String,
    }
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        kind: DatasetKind,
        seed: u64,
        sample_rate: u32,
        items: Vec<ManifestEntry<'a>>,
    }

    let mut paths = Vec::new();
    for index in 0..spec.items.len() {
        let item = materialize_item(&spec, index);
        let input_path = format!("{}-input.wav", item.id);
        let target_path = format!("{}-target.wav", item.id);
        wav::write_wav(&out.join(&input_path), &item.input)?;
        wav::write_wav(&out.join(&target_path), &item.target)?;
        paths.push((input_path, target_path));
        eprintln!("wrote item {}/{}: {}", index + 1, spec.items.len(), item.id);
    }
    let manifest = Manifest {
        kind,
        seed,
        sample_rate: sptmod_core::dataset::SAMPLE_RATE,
        items: spec
            .items
            .iter()
            .zip(&paths)
            .map(|(item, (input_path, target_path))| ManifestEntry {
                id: &item.id,
                controls: &item.controls,
                settings: &item.settings,
                input_path: input_path.clone(),
                target_path: target_path.clone(),
            })
            .collect(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    println!("{} items written to {}", spec.items.len(), out.display());
    Ok(())
}

fn solve_lengths_cmd(preset: &str, l_out: usize, controls: usize) -> Result<()> {
    let model = SptmodConfig::preset_by_name(preset, controls).map_err(|e| anyhow!("{e}"))?;
    let spn = SpnConfig::for_preset(preset).map_err(|e| anyhow!("{e}"))?;
    let plan = solve_lengths(&model, l_out).map_err(|e| anyhow!("{e}"))?;
    #[derive(serde::Serialize)]
    struct Output {
        plan: sptmod_core::model::LengthPlan,
        spn_lookback: usize,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Output {
            plan,
            spn_lookback: spn_lookback(&spn),
        })?
    );
    Ok(())
}

fn dataset_with_splits(dataset: &str, seed: u64) -> Result<(DatasetSpec, SplitSet)> {
    let kind = DatasetKind::parse(dataset).map_err(|e| anyhow!("{e}"))?;
    let spec = build_dataset(kind, seed).map_err(|e| anyhow!("{e}"))?;
    let ids: Vec<String> = spec.items.iter().map(|i| i.id.clone()).collect();
    let splits = make_splits(&ids, kind.split_counts(), seed).map_err(|e| anyhow!("{e}"))?;
    Ok((spec, splits))
}

#[allow(clippy::too_many_arguments)]
fn train_cmd<S: checkpoint::ScalarBytes>(
    preset: &str,
    dataset: &str,
    n: usize,
    b: usize,
    l: usize,
    split: usize,
    seed: u64,
    out: &Path,
    flags: &RunFlags,
) -> Result<()> {
    let (model_config, spn_config) = configs_for(preset)?;
    let (spec, splits) = dataset_with_splits(dataset, seed)?;
    eprintln!("materializing {} items...", spec.items.len());
    let data = runner::build_train_data::<S>(&spec, flags.trim_seconds)?;
    let (train_items, val_items, _) = runner::split_indices(&spec, &splits, split)?;

    let cell = sptmod_core::experiment::CellKey { n, b, l };
    let run_seed = runner::run_seed(seed, cell, split);
    let mut model = Sptmod::<S>::new(model_config.clone(), run_seed).map_err(|e| anyhow!("{e}"))?;
    let mut spn = Spn::<S>::new(spn_config, &model_config, run_seed ^ 0x5bd1_e995).map_err(|e| anyhow!("{e}"))?;
    let config = sptmod_core::trainer::TrainConfig {
        n,
        batch: b,
        seq_len: l,
        adam: AdamConfig::with_learning_rate(flags.lr),
        patience_iterations: flags.patience,
        max_iterations: flags.max_iterations,
        max_epochs: flags.max_epochs,
        seed: run_seed,
        spectral: Default::default(),
    };
    let clock = sptmod_cli::SystemClock::new();
    eprintln!("training (N={n}, B={b}, L={l}, split {split})...");
    let mut record =
        sptmod_core::trainer::train(&mut model, &mut spn, &data, &train_items, &val_items, &config, &clock)
            .map_err(|e| anyhow!("{e}"))?;

    fs::create_dir_all(out)?;
    let plan = solve_lengths(model.config(), l).map_err(|e| anyhow!("{e}"))?;
    checkpoint::save(&out.join("checkpoint"), &model, &spn, Some(&plan))?;
    record.checkpoint = Some(out.join("checkpoint").display().to_string());
    records::write_train_log(&out.join("train_log.jsonl"), &record)?;
    let grid_record = GridRunRecord {
        run_id: GridRunRecord::id_for(cell, split),
        cell,
        split,
        record: Some(record.clone()),
        error: None,
    };
    records::write_records(&out.join("records.jsonl"), &[grid_record])?;
    println!(
        "best ST validation loss {:.6} at iteration {} ({} iterations total); checkpoint in {}",
        record.best_st_loss,
        record.best_iteration,
        record.iterations,
        out.display()
    );
    Ok(())
}

fn grid_cmd<S: Scalar>(
    preset: &str,
    dataset: &str,
    grid: GridSpec,
    seed: u64,
    out: &Path,
    workers: usize,
    flags: &RunFlags,
) -> Result<()> {
    let (model_config, spn_config) = configs_for(preset)?;
    let (spec, splits) = dataset_with_splits(dataset, seed)?;
    eprintln!("materializing {} items...", spec.items.len());
    let data = runner::build_train_data::<S>(&spec, flags.trim_seconds)?;
    eprintln!("running {} runs on {} workers...", grid.runs().len(), workers);
    let results = runner::run_grid_parallel(
        &grid,
        &model_config,
        &spn_config,
        &data,
        &spec,
        &splits,
        &flags.options(),
        workers,
    )?;
    fs::create_dir_all(out)?;
    records::write_records(&out.join("records.jsonl"), &results)?;
    let stats = aggregate(&results);
    records::write_tables(out, &grid, &stats)?;
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} runs ({} failed); records and tables in {}",
        results.len(),
        failures,
        out.display()
    );
    Ok(())
}

fn aggregate_cmd(records_path: &Path, out: &Path) -> Result<()> {
    let results = records::read_records(records_path)?;
    let grid_path = records_path
        .parent()
        .map(|d| d.join("grid.json"))
        .filter(|p| p.exists())
        .ok_or_else(|| anyhow!("grid.json not found next to {}", records_path.display()))?;
    let grid: GridSpec = serde_json::from_slice(&fs::read(&grid_path)?)
        .with_context(|| format!("parsing {}", grid_path.display()))?;
    let stats = aggregate(&results);
    fs::create_dir_all(out)?;
    records::write_tables(out, &grid, &stats)?;
    println!("{} cells aggregated into {}", stats.len(), out.display());
    Ok(())
}

fn infer_cmd(checkpoint_base: &Path, input: &Path, output: &Path, controls: &str, chunk: usize) -> Result<()> {
    let manifest: checkpoint::CheckpointManifest =
        serde_json::from_slice(&fs::read(checkpoint::manifest_path(checkpoint_base))?)?;
    match manifest.dtype.as_str() {
        "f32" => infer_typed::<f32>(checkpoint_base, input, output, controls, chunk),
        "f64" => infer_typed::<f64>(checkpoint_base, input, output, controls, chunk),
        other => bail!("unsupported checkpoint dtype `{other}`"),
    }
}

fn infer_typed<S: checkpoint::ScalarBytes>(
    checkpoint_base: &Path,
    input: &Path,
    output: &Path,
    controls: &str,
    chunk: usize,
) -> Result<()> {
    let (model, _spn, _) = checkpoint::load::<S>(checkpoint_base)?;
    let controls = parse_controls(controls)?;
    if controls.len() != model.config().num_controls {
        bail!(
            "{} control values provided, model expects {}",
            controls.len(),
            model.config().num_controls
        );
    }
    let audio = wav::read_wav(input)?;
    let plan = solve_lengths(model.config(), chunk).map_err(|e| anyhow!("{e}"))?;
    if audio.len() < plan.l_nopad {
        bail!("input shorter than the first buffer ({} samples)", plan.l_nopad);
    }

    let controls_t = Tensor::<S>::new(
        &[1, model.config().num_controls],
        controls.values.iter().map(|&v| S::from_f64(v)).collect(),
    )
    .map_err(|e| anyhow!("{e}"))?;
    let to_tensor = |samples: &[f64]| -> Tensor<S> {
        Tensor::new(
            &[1, 1, samples.len()],
            samples.iter().map(|&v| S::from_f64(v)).collect(),
        )
        .expect("finite audio")
    };

    // The first buffer runs padding-free from fresh states (no reference
    // signal exists at inference, so the SPN cannot warm-start here); the
    // rest stream with cached padding.
    let mut out_samples: Vec<f64> = Vec::new();
    let mut ctx: Option<RecurrentContext<S>> = None;
    let mut pos = 0usize;
    let mut chunks = 0usize;
    loop {
        let take = if ctx.is_none() { plan.l_nopad } else { chunk };
        if pos + take > audio.len() {
            break;
        }
        let mut tape = Tape::new();
        let binding = model.bind_constants(&mut tape);
        let x = tape.constant(to_tensor(&audio.samples[pos..pos + take]));
        let c = tape.constant(controls_t.clone());
        let pass = match &ctx {
            None => ForwardPass::NoPad {
                plan: &plan,
                states: InitialStates::Fresh,
            },
            Some(ctx) => ForwardPass::Cached { ctx },
        };
        let (out, new_ctx) = model.forward(&mut tape, &binding, x, c, pass).map_err(|e| anyhow!("{e}"))?;
        out_samples.extend(tape.value(out).data().iter().map(|v| v.to_f64()));
        ctx = Some(new_ctx);
        pos += take;
        chunks += 1;
    }
    wav::write_wav(output, &sptmod_core::dataset::AudioBuffer::from_samples(out_samples))?;
    println!(
        "streamed {} -> {} ({} buffers, {} output samples)",
        input.display(),
        output.display(),
        chunks,
        pos.saturating_sub(plan.l_nopad) + chunk
    );
    Ok(())
}
