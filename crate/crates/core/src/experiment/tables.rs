//! Result tables: one per N, rows over B ascending, columns over L
//! ascending, with a second header row carrying the cumulative length
//! L_c = N·L. Excluded or missing cells render empty, matching the layout
//! of the published result tables.

use alloc::string::String;
use alloc::vec::Vec;

use super::grid::{CellStats, GridSpec};

/// Which statistic a table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStat {
    MedianLoss,
    MadLoss,
    MedianTrainHours,
}

impl TableStat {
    pub fn file_stem(self) -> &'static str {
        match self {
            TableStat::MedianLoss => "median_loss",
            TableStat::MadLoss => "mad_loss",
            TableStat::MedianTrainHours => "median_hours",
        }
    }

    fn pick(self, stats: &CellStats) -> f64 {
        match self {
            TableStat::MedianLoss => stats.median_loss,
            TableStat::MadLoss => stats.mad_loss,
            TableStat::MedianTrainHours => stats.median_train_hours,
        }
    }
}

/// Renders one per-N table as CSV. Layout:
///
/// ```text
/// L,4096,8192
/// B \ L_c,8192,16384
/// 8,0.123456,0.234567
/// 16,,0.345678
/// ```
pub fn render_table_csv(spec: &GridSpec, stats: &[CellStats], n: usize, stat: TableStat) -> String {
    let mut l_values = spec.l_values.clone();
    l_values.sort_unstable();
    let mut b_values = spec.b_values.clone();
    b_values.sort_unstable();

    let mut out = String::from("L");
    for &l in &l_values {
        out.push(',');
        out.push_str(&alloc::format!("{l}"));
    }
    out.push('\n');
    out.push_str("B \\ L_c");
    for &l in &l_values {
        out.push(',');
        out.push_str(&alloc::format!("{}", n * l));
    }
    out.push('\n');
    for &b in &b_values {
        out.push_str(&alloc::format!("{b}"));
        for &l in &l_values {
            out.push(',');
            if spec.is_excluded(b, l) {
                continue;
            }
            if let Some(cell) = stats
                .iter()
                .find(|s| s.cell.n == n && s.cell.b == b && s.cell.l == l)
            {
                out.push_str(&alloc::format!("{:.6}", stat.pick(cell)));
            }
        }
        out.push('\n');
    }
    out
}

/// File name and contents for every (N, statistic) table.
pub fn render_all_tables(spec: &GridSpec, stats: &[CellStats]) -> Vec<(String, String)> {
    let mut n_values = spec.n_values.clone();
    n_values.sort_unstable();
    let mut out = Vec::new();
    for stat in [TableStat::MedianLoss, TableStat::MadLoss, TableStat::MedianTrainHours] {
        for &n in &n_values {
            out.push((
                alloc::format!("{}_n{}.csv", stat.file_stem(), n),
                render_table_csv(spec, stats, n, stat),
            ));
        }
    }
    out
}

/// Parses a rendered table back into (b, l, value) triples; empty cells are
/// skipped. Used by the round-trip tests and the aggregation CLI.
pub fn parse_table_csv(csv: &str) -> Result<Vec<(usize, usize, f64)>, String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty table")?;
    let l_values: Vec<usize> = header
        .split(',')
        .skip(1)
        .map(|v| v.parse().map_err(|e| alloc::format!("bad L `{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    let _lc_row = lines.next().ok_or("missing L_c header row")?;
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let b: usize = fields
            .next()
            .ok_or("missing B")?
            .parse()
            .map_err(|e| alloc::format!("bad B: {e}"))?;
        for (i, field) in fields.enumerate() {
            if field.is_empty() {
                continue;
            }
            let value: f64 = field.parse().map_err(|e| alloc::format!("bad value `{field}`: {e}"))?;
            out.push((b, l_values[i], value));
        }
    }
    Ok(out)
}
