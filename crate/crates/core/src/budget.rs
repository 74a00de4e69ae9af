//! Token-budget arithmetic over a drop schedule.
//!
//! The headline efficiency number is the visual-token count averaged over
//! every backbone layer. With `16:0.5,24:0` over 32 layers that average is
//! `(16 n0 + 8 floor(n0 / 2)) / 32`, roughly `0.625 n0`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prune::DropSchedule;

/// Hidden size used for the linear term of the cost proxy when none is given.
pub const DEFAULT_D_MODEL: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub n0: usize,
    /// Visual tokens carried by each layer, layer 1 first.
    pub per_layer_counts: Vec<usize>,
    /// Sum of `per_layer_counts` divided by the layer count.
    pub average: f64,
    /// Reference token count for `reduction_pct` and `flop_proxy`.
    pub base_tokens: usize,
    /// `100 * (1 - average / base_tokens)`.
    pub reduction_pct: f64,
    /// Relative attention cost against `base_tokens` at every layer.
    pub flop_proxy: f64,
    pub d_model: usize,
}

/// Budget for `n0` entering tokens, measured against `base_tokens`.
pub fn budget_report(
    n0: usize,
    schedule: &DropSchedule,
    base_tokens: usize,
    d_model: usize,
) -> BudgetReport {
    let per_layer_counts = schedule.per_layer_counts(n0);
    let total: u128 = per_layer_counts.iter().map(|&c| c as u128).sum();
    let average = total as f64 / per_layer_counts.len() as f64;
    let reduction_pct = if base_tokens == 0 {
        0.0
    } else {
        100.0 * (1.0 - average / base_tokens as f64)
    };
    let flop_proxy = flop_proxy(&per_layer_counts, d_model, base_tokens);
    BudgetReport {
        n0,
        per_layer_counts,
        average,
        base_tokens,
        reduction_pct,
        flop_proxy,
        d_model,
    }
}

/// Budget measured against `n0` itself.
pub fn average_tokens(n0: usize, schedule: &DropSchedule) -> BudgetReport {
    budget_report(n0, schedule, n0, DEFAULT_D_MODEL)
}

/// `sum_l (c_l^2 + c_l d) / (L (b^2 + b d))`.
///
/// A proxy for comparing attention cost between schedules, not a latency
/// model. A zero base with zero counts is 1.0; a zero base with tokens is
/// infinite.
pub fn flop_proxy(per_layer_counts: &[usize], d_model: usize, base_n0: usize) -> f64 {
    let cost = |c: usize| {
        let c = c as f64;
        c * c + c * d_model as f64
    };
    let num: f64 = per_layer_counts.iter().map(|&c| cost(c)).sum();
    let den = per_layer_counts.len() as f64 * cost(base_n0);
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Smallest entry count whose layer-averaged budget reaches `target_avg`
/// to within half a token.
pub fn plan_entry_tokens(target_avg: f64, schedule: &DropSchedule) -> Result<usize> {
    if !target_avg.is_finite() || target_avg < 0.0 {
        return Err(Error::Config(format!(
            "target average {target_avg} must be finite and non-negative"
        )));
    }
    let threshold = target_avg - 0.5;
    let reaches = |n0: usize| average_tokens(n0, schedule).average >= threshold;
    if reaches(0) {
        return Ok(0);
    }
    // Average is non-decreasing in n0: bracket, then bisect.
    let mut hi: usize = 1;
    while !reaches(hi) {
        if hi > (1 << 52) {
            return Err(Error::Config(format!(
                "target average {target_avg} is unreachable under schedule {schedule}"
            )));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
