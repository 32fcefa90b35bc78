//! Line-delimited JSON run records (`records.jsonl`) and the aggregated
//! table/stat outputs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};

use sptmod_core::experiment::{render_all_tables, CellStats, GridRunRecord, GridSpec};

/// Appends one record per line, in the given order.
pub fn write_records(path: &Path, records: &[GridRunRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<GridRunRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Writes one training run as line-delimited JSON events: an `iteration`
/// event per weight update and an `epoch` event per validation pass.
pub fn write_train_log(path: &Path, record: &sptmod_core::trainer::RunRecord) -> Result<()> {
    #[derive(serde::Serialize)]
    #[serde(tag = "event", rename_all = "snake_case")]
    enum LogEvent {
        Iteration { iteration: u64, loss: f64 },
        Epoch {
            epoch: u32,
            iteration: u64,
            train_loss: f64,
            wt_loss: f64,
            st_loss: f64,
        },
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut epochs = record.epochs.iter().peekable();
    for (i, &loss) in record.iteration_losses.iter().enumerate() {
        let iteration = i as u64 + 1;
        serde_json::to_writer(&mut file, &LogEvent::Iteration { iteration, loss })?;
        file.write_all(b"\n")?;
        while epochs.peek().is_some_and(|e| e.iterations == iteration) {
            let e = epochs.next().expect("peeked");
            serde_json::to_writer(
                &mut file,
                &LogEvent::Epoch {
                    epoch: e.epoch,
                    iteration: e.iterations,
                    train_loss: e.train_loss,
                    wt_loss: e.wt_loss,
                    st_loss: e.st_loss,
                },
            )?;
            file.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes `tables/*.csv` plus `stats.json` (cell statistics with run ids,
/// so every table cell is traceable to its runs).
pub fn write_tables(out_dir: &Path, spec: &GridSpec, stats: &[CellStats]) -> Result<()> {
    let tables_dir = out_dir.join("tables");
    fs::create_dir_all(&tables_dir)?;
    for (name, csv) in render_all_tables(spec, stats) {
        fs::write(tables_dir.join(name), csv)?;
    }
    fs::write(out_dir.join("stats.json"), serde_json::to_vec_pretty(stats)?)?;
    fs::write(out_dir.join("grid.json"), serde_json::to_vec_pretty(spec)?)?;
    Ok(())
}
