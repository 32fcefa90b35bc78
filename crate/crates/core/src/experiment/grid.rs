//! (N, B, L) grid sweeps: cell enumeration, per-cell-and-split run records,
//! and median/MAD aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RunRecord;

use super::stats::{estimate_train_time_hours, mad, median};

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub n: usize,
    pub b: usize,
    pub l: usize,
}

/// Cartesian sweep specification with excluded (B, L) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_values: Vec<usize>,
    pub b_values: Vec<usize>,
    pub l_values: Vec<usize>,
    /// (B, L) combinations to skip in every N table.
    pub excluded: Vec<(usize, usize)>,
    /// Number of train/validation/test splits to run per cell.
    pub splits: usize,
    pub base_seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.b_values.is_empty() || self.l_values.is_empty() {
            return Err(Error::Config(String::from("grid axes must be nonempty")));
        }
        if self.splits == 0 {
            return Err(Error::Config(String::from("grid needs at least one split")));
        }
        Ok(())
    }

    pub fn is_excluded(&self, b: usize, l: usize) -> bool {
        self.excluded.contains(&(b, l))
    }

    /// All (cell, split) work units in deterministic order.
    pub fn runs(&self) -> Vec<(CellKey, usize)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &b in &self.b_values {
                for &l in &self.l_values {
                    if self.is_excluded(b, l) {
                        continue;
                    }
                    for split in 0..self.splits {
                        out.push((CellKey { n, b, l }, split));
                    }
                }
            }
        }
        out
    }
}

/// Outcome of one (cell, split) run; failures are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRunRecord {
    pub run_id: String,
    pub cell: CellKey,
    pub split: usize,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

impl GridRunRecord {
    pub fn id_for(cell: CellKey, split: usize) -> String {
        alloc::format!("n{}-b{}-l{}-split{}", cell.n, cell.b, cell.l, split)
    }
}

/// Runs every (cell, split) through the given runner sequentially. Errors
/// become failure records and the grid continues. The CLI layer fans the
/// same work units out across worker threads.
pub fn run_grid<F>(spec: &GridSpec, mut runner: F) -> Result<Vec<GridRunRecord>>
where
    F: FnMut(CellKey, usize) -> Result<RunRecord>,
{
    spec.validate()?;
    let mut records = Vec::new();
    for (cell, split) in spec.runs() {
        let run_id = GridRunRecord::id_for(cell, split);
        match runner(cell, split) {
            Ok(record) => records.push(GridRunRecord {
                run_id,
                cell,
                split,
                record: Some(record),
                error: None,
            }),
            Err(e) => records.push(GridRunRecord {
                run_id,
                cell,
                split,
                record: None,
                error: Some(alloc::format!("{e}")),
            }),
        }
    }
    Ok(records)
}

/// Aggregated statistics of one cell, traceable to its runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub cell: CellKey,
    pub median_loss: f64,
    pub mad_loss: f64,
    pub median_train_hours: f64,
    pub runs: usize,
    pub run_ids: Vec<String>,
}

/// Groups records by cell and reduces best-ST losses and estimated training
/// times to medians (MAD for spread). Failed runs are skipped; cells with
/// no successful runs are omitted.
pub fn aggregate(records: &[GridRunRecord]) -> Vec<CellStats> {
    let mut cells: Vec<CellKey> = records.iter().map(|r| r.cell).collect();
    cells.sort_unstable();
    cells.dedup();
    let mut out = Vec::new();
    for cell in cells {
        let mut losses = Vec::new();
        let mut hours = Vec::new();
        let mut run_ids = Vec::new();
        for r in records.iter().filter(|r| r.cell == cell) {
            if let Some(record) = &r.record {
                if record.failed || !record.best_st_loss.is_finite() {
                    continue;
                }
                let trajectory: Vec<(u64, f64)> =
                    record.epochs.iter().map(|e| (e.iterations, e.st_loss)).collect();
                losses.push(record.best_st_loss);
                hours.push(estimate_train_time_hours(&trajectory, record.sec_per_iter));
                run_ids.push(r.run_id.clone());
            }
        }
        if losses.is_empty() {
            continue;
        }
        // Stats must not depend on the order runs happened to finish in.
        run_ids.sort_unstable();
        out.push(CellStats {
            cell,
            median_loss: median(&losses),
            mad_loss: mad(&losses),
            median_train_hours: median(&hours),
            runs: losses.len(),
            run_ids,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_record(best: f64) -> RunRecord {
        RunRecord {
            config: crate::trainer::TrainConfig::new(1, 1, 8, 0),
            iteration_losses: alloc::vec![best],
            epochs: alloc::vec![crate::trainer::EpochRecord {
                epoch: 0,
                iterations: 10,
                train_loss: best,
                wt_loss: best,
                st_loss: best,
                wall_seconds: 1.0,
            }],
            best_st_loss: best,
            best_iteration: 10,
            iterations: 10,
            sec_per_iter: 0.5,
            failed: false,
            failure: None,
            checkpoint: None,
        }
    }

    #[test]
    fn run_counting_and_exclusions() {
        let spec = GridSpec {
            n_values: alloc::vec![1],
            b_values: alloc::vec![2, 128],
            l_values: alloc::vec![8, 32_768],
            excluded: alloc::vec![(128, 32_768)],
            splits: 2,
            base_seed: 0,
        };
        // 4 cells minus 1 excluded, times 2 splits
        assert_eq!(spec.runs().len(), 6);
        let records = run_grid(&spec, |_, _| Ok(dummy_record(1.0))).unwrap();
        assert_eq!(records.len(), 6);
    }

    #[test]
    fn failures_are_recorded_and_grid_continues() {
        let spec = GridSpec {
            n_values: alloc::vec![1],
            b_values: alloc::vec![1, 2],
            l_values: alloc::vec![8],
            excluded: alloc::vec![],
            splits: 1,
            base_seed: 0,
        };
        let records = run_grid(&spec, |cell, _| {
            if cell.b == 1 {
                Err(Error::Config(String::from("boom")))
            } else {
                Ok(dummy_record(2.0))
            }
        })
        .unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].error.is_some());
        assert!(records[1].record.is_some());
        let stats = aggregate(&records);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].cell.b, 2);
    }

    #[test]
    fn aggregation_is_execution_order_independent() {
        let cell_a = CellKey { n: 1, b: 2, l: 8 };
        let cell_b = CellKey { n: 2, b: 2, l: 8 };
        let mut records: Vec<GridRunRecord> = [(cell_a, 0, 1.0), (cell_a, 1, 3.0), (cell_b, 0, 2.0)]
            .iter()
            .map(|&(cell, split, loss)| GridRunRecord {
                run_id: GridRunRecord::id_for(cell, split),
                cell,
                split,
                record: Some(dummy_record(loss)),
                error: None,
            })
            .collect();
        let forward = aggregate(&records);
        records.reverse();
        let reversed = aggregate(&records);
        assert_eq!(forward.len(), reversed.len());
        for (a, b) in forward.iter().zip(&reversed) {
            assert_eq!(a.cell, b.cell);
            assert_eq!(a.median_loss, b.median_loss);
            assert_eq!(a.mad_loss, b.mad_loss);
            assert_eq!(a.run_ids, b.run_ids);
        }
    }

    #[test]
    fn aggregate_reduces_per_cell() {
        let cell = CellKey { n: 2, b: 4, l: 16 };
        let records: Vec<GridRunRecord> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(split, &loss)| GridRunRecord {
                run_id: GridRunRecord::id_for(cell, split),
                cell,
                split,
                record: Some(dummy_record(loss)),
                error: None,
            })
            .collect();
        let stats = aggregate(&records);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].median_loss, 2.0);
        assert_eq!(stats[0].mad_loss, 1.0);
        assert_eq!(stats[0].runs, 3);
        assert_eq!(stats[0].run_ids.len(), 3);
    }
}
