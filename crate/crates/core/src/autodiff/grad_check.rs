//! Central finite-difference verification of analytic gradients.
//!
//! Runs in double precision only: with step 1e-5 the truncation and
//! roundoff error of the central quotient sit well below the 1e-5
//! relative tolerance the suite asserts.

use alloc::vec::Vec;

use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::{Tape, ValueId};
use super::tensor::Tensor;

/// Per-run report: worst relative error overall and per checked leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (leaf index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    /// Max relative error per leaf, in leaf order.
    pub per_leaf: Vec<f64>,
    pub elements: usize,
}

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with an absolute floor in the denominator. Below the
/// floor the comparison degrades to an absolute tolerance of
/// `tol * 1e-4`, which keeps roundoff noise in the central quotient from
/// failing elements whose true gradient is essentially zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Checks analytic gradients of a scalar-valued graph against central
/// finite differences over every element of every leaf.
///
/// `build` must construct the same graph for any leaf values; it receives
/// the leaves already recorded as tracked tape inputs and returns the loss.
pub fn grad_check<F>(leaves: &[Tensor<f64>], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        tape.value(loss).item().map(|v| v.to_f64())
    };

    let mut tape = Tape::new();
    let ids: Vec<ValueId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        per_leaf: alloc::vec![0.0; leaves.len()],
        elements: 0,
    };
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(ids[li]);
        for e in 0..leaf.numel() {
            let orig = work[li].data()[e];
            work[li].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[li].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[li].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g[e]);
            let rel = relative_error(a, numeric);
            if rel > report.per_leaf[li] {
                report.per_leaf[li] = rel;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (li, e);
            }
            report.elements += 1;
        }
    }
    Ok(report)
}
