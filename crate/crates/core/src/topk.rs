//! Deterministic top-k selection.
//!
//! Every ranking in the engine orders by descending score and breaks ties by
//! ascending index. Scores are finite by construction, so `-0.0` and `0.0`
//! compare equal and fall through to the index tie-break.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

#[inline]
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Returns the `k` best indices of `scores`, optionally restricted to the
/// candidates in `restrict`, sorted best first.
pub fn top_k(scores: &[f64], k: usize, restrict: Option<&[usize]>) -> Result<Vec<usize>> {
    let mut candidates: Vec<usize> = match restrict {
        Some(r) => r.to_vec(),
        None => (0..scores.len()).collect(),
    };
    top_k_in_place(scores, k, &mut candidates)?;
    Ok(candidates)
}

/// Partial selection followed by a sort of the winners; `candidates` is
/// truncated to the result.
pub(crate) fn top_k_in_place(scores: &[f64], k: usize, candidates: &mut Vec<usize>) -> Result<()> {
    if k > candidates.len() {
        return Err(Error::KTooLarge {
            k,
            candidates: candidates.len(),
        });
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::Dimension(alloc::format!(
            "candidate index {bad} out of range for {} scores",
            scores.len()
        )));
    }
    if k == 0 {
        candidates.clear();
        return Ok(());
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    Ok(())
}
