//! Robust aggregation: median, median absolute deviation, and the
//! iterations-to-convergence training-time estimate.

use alloc::vec::Vec;

/// Median; even counts average the two central values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation: the median of |x_i - median(x)|.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&deviations)
}

/// Training time in hours: the first iteration whose streamed validation
/// loss comes within 5% of the run's minimum, times the per-iteration cost.
pub fn estimate_train_time_hours(epoch_trajectory: &[(u64, f64)], sec_per_iter: f64) -> f64 {
    if epoch_trajectory.is_empty() {
        return 0.0;
    }
    let min = epoch_trajectory.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
    let threshold = 1.05 * min;
    let iterations = epoch_trajectory
        .iter()
        .find(|&&(_, l)| l <= threshold)
        .map(|&(i, _)| i)
        .unwrap_or(epoch_trajectory.last().unwrap().0);
    iterations as f64 * sec_per_iter / 3600.0
}
