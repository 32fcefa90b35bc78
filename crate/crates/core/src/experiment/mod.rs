//! Grid experiments over (N, B, L): cell enumeration, run records,
//! median/MAD aggregation, and result-table rendering.

mod grid;
mod stats;
mod tables;

pub use grid::{aggregate, run_grid, CellKey, CellStats, GridRunRecord, GridSpec};
pub use stats::{estimate_train_time_hours, mad, median};
pub use tables::{parse_table_csv, render_all_tables, render_table_csv, TableStat};
