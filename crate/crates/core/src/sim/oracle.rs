//! Brute-force reference for the whole pipeline.
//!
//! Shares no ranking, scoring or counting code with the main path: every
//! selection is a full stable sort of an ascending index list, every score a
//! plain loop. Float accumulation runs in the same order as the main path
//! so results are comparable bit for bit. Meant for N up to a few dozen.

use alloc::format;
use alloc::vec::Vec;

use crate::budget::{BudgetReport, DEFAULT_D_MODEL};
use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, Matrix, ScoreVector};
use crate::prune::{
    DropSchedule, PruneTrace, SalientSelector, ScheduleKind, StageAudit, StageState,
};
use crate::tensor::Archive;
use crate::vision::{ClusterMode, CompressionConfig, CompressionResult};

use super::{PipelineInputs, PipelineTrace};

/// Stable sort by descending score; ascending input keeps ties in index order.
fn ranked(candidates: &[usize], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = candidates.to_vec();
    v.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).expect("finite scores"));
    v
}

fn column_sums(a: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..a.cols() {
        let mut s = 0.0;
        for j in 0..a.rows() {
            s += a.get(j, i);
        }
        out.push(s);
    }
    out
}

fn naive_mean(x: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for c in 0..x.cols() {
        let mut s = x.get(members[0], c);
        let mut lo = s;
        let mut hi = s;
        for &m in &members[1..] {
            let v = x.get(m, c);
            s += v;
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        let mut mean = s / members.len() as f64;
        if mean < lo {
            mean = lo;
        }
        if mean > hi {
            mean = hi;
        }
        out.push(mean);
    }
    out
}

pub fn oracle_compress(
    x: &Matrix,
    a: &AttentionMap,
    cfg: &CompressionConfig,
) -> Result<CompressionResult> {
    let n = x.rows();
    if a.rows() != n || a.cols() != n {
        return Err(Error::Dimension(format!("attention {}x{} vs {n} tokens", a.rows(), a.cols())));
    }
    if cfg.w == 0 || cfg.k1 + cfg.k2 > n {
        return Err(Error::Config(format!("bad config {cfg:?} for {n} tokens")));
    }
    let scores = column_sums(a.matrix());
    let all: Vec<usize> = (0..n).collect();
    let mut dominant = ranked(&all, |i| scores[i]);
    dominant.truncate(cfg.k1);

    let residuals: Vec<usize> = all.iter().copied().filter(|i| !dominant.contains(i)).collect();
    let mut centroids = ranked(&residuals, |i| scores[i]);
    centroids.truncate(cfg.k2);

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    match cfg.mode {
        ClusterMode::Overlapping => {
            for &c in &centroids {
                let mut members = ranked(&residuals, |j| a.matrix().get(c, j));
                members.truncate(cfg.w.min(residuals.len()));
                clusters.push(members);
            }
        }
        ClusterMode::Disjoint => {
            let mut pool: Vec<usize> = residuals
                .iter()
                .copied()
                .filter(|i| !centroids.contains(i))
                .collect();
            for &c in &centroids {
                let mut picked = ranked(&pool, |j| a.matrix().get(c, j));
                picked.truncate((cfg.w - 1).min(pool.len()));
                pool.retain(|i| !picked.contains(i));
                let mut members = alloc::vec![c];
                members.extend(picked);
                clusters.push(members);
            }
        }
    }

    let mut merged_rows = Vec::new();
    for members in &clusters {
        merged_rows.push(naive_mean(x, members));
    }
    let d = x.cols();
    let mut merged = Vec::new();
    for r in &merged_rows {
        merged.extend_from_slice(r);
    }
    let mut output = Vec::new();
    for &i in &dominant {
        output.extend_from_slice(x.row(i));
    }
    output.extend_from_slice(&merged);

    let mut dropped = Vec::new();
    for &r in &residuals {
        if !clusters.iter().any(|m| m.contains(&r)) {
            dropped.push(r);
        }
    }

    Ok(CompressionResult {
        scores: ScoreVector(scores),
        dominant_indices: dominant,
        centroid_indices: centroids,
        cluster_members: clusters,
        merged_tokens: Matrix::new(merged_rows.len(), d, merged)?,
        output_tokens: Matrix::new(cfg.k1 + cfg.k2, d, output)?,
        dropped_indices: dropped,
    })
}

fn oracle_counts(schedule: &DropSchedule, n0: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, s) in schedule.stages().iter().enumerate() {
        let prev = if i == 0 { n0 } else { out[i - 1] };
        let base = match schedule.kind() {
            ScheduleKind::Absolute => n0,
            ScheduleKind::Multiplicative => prev,
        };
        let mut c = 0usize;
        // Largest c with c <= ratio * base, by counting up.
        while c < base && ((c + 1) as f64) <= s.ratio * base as f64 {
            c += 1;
        }
        out.push(if c < prev { c } else { prev });
    }
    out
}

fn oracle_salient(text: &AttentionMap, selector: SalientSelector) -> Vec<usize> {
    let m = text.rows();
    let mut s = match selector {
        SalientSelector::LastToken => Vec::new(),
        SalientSelector::AllTokens => (0..m).collect(),
        SalientSelector::TopSaliency {
            count,
            system_prefix,
        } => {
            let sums = column_sums(text.matrix());
            let candidates: Vec<usize> = (system_prefix.min(m)..m).collect();
            let mut top = ranked(&candidates, |i| sums[i]);
            top.truncate(count);
            top
        }
    };
    if !s.contains(&(m - 1)) {
        s.push(m - 1);
    }
    s.sort();
    s
}

/// Reference rank-and-drop. `t2v_for(stage, positions)` returns the
/// `m x |positions|` block for the tokens entering that stage.
pub fn oracle_prune(
    n0: usize,
    text: &[AttentionMap],
    t2v_for: impl Fn(usize, &[usize]) -> Result<AttentionMap>,
    schedule: &DropSchedule,
    selector: SalientSelector,
) -> Result<PruneTrace> {
    let counts = oracle_counts(schedule, n0);
    let mut states = alloc::vec![StageState {
        layer: 0,
        retained: (0..n0).collect(),
    }];
    let mut audits = Vec::new();
    for (i, stage) in schedule.stages().iter().enumerate() {
        let entering = states[i].retained.clone();
        if entering.is_empty() {
            audits.push(StageAudit {
                boundary: stage.boundary,
                salient: Vec::new(),
                scores: ScoreVector::default(),
            });
            states.push(StageState {
                layer: stage.boundary,
                retained: Vec::new(),
            });
            continue;
        }
        let tx = text
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("no text attention for stage {i}")))?;
        if tx.rows() == 0 {
            return Err(Error::Empty("text sequence"));
        }
        let salient = oracle_salient(tx, selector);
        let block = t2v_for(i, &entering)?;
        if block.cols() != entering.len() || block.rows() != tx.rows() {
            return Err(Error::Dimension(format!("stage {i} block shape")));
        }
        let mut scores = Vec::new();
        for col in 0..entering.len() {
            let mut s = 0.0;
            for &r in &salient {
                s += block.matrix().get(r, col);
            }
            scores.push(s);
        }
        for s in scores.iter_mut() {
            *s /= salient.len() as f64;
        }
        let local: Vec<usize> = (0..entering.len()).collect();
        let mut keep = ranked(&local, |p| scores[p]);
        keep.truncate(counts[i]);
        let mut retained: Vec<usize> = keep.iter().map(|&p| entering[p]).collect();
        retained.sort();
        audits.push(StageAudit {
            boundary: stage.boundary,
            salient,
            scores: ScoreVector(scores),
        });
        states.push(StageState {
            layer: stage.boundary,
            retained,
        });
    }
    Ok(PruneTrace {
        states,
        stages: audits,
    })
}

fn oracle_budget(n0: usize, schedule: &DropSchedule, base: usize, d_model: usize) -> BudgetReport {
    let counts = oracle_counts(schedule, n0);
    let mut per_layer = Vec::new();
    for layer in 1..=schedule.total_layers() {
        // Tokens at a layer: the count after the last boundary strictly below it.
        let mut c = n0;
        for (i, s) in schedule.stages().iter().enumerate() {
            if s.boundary < layer {
                c = counts[i];
            }
        }
        per_layer.push(c);
    }
    let mut total = 0u128;
    for &c in &per_layer {
        total += c as u128;
    }
    let average = total as f64 / per_layer.len() as f64;
    let reduction_pct = if base == 0 {
        0.0
    } else {
        100.0 * (1.0 - average / base as f64)
    };
    let mut num = 0.0;
    for &c in &per_layer {
        let c = c as f64;
        num += c * c + c * d_model as f64;
    }
    let b = base as f64;
    let den = per_layer.len() as f64 * (b * b + b * d_model as f64);
    let flop_proxy = if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    };
    BudgetReport {
        n0,
        per_layer_counts: per_layer,
        average,
        base_tokens: base,
        reduction_pct,
        flop_proxy,
        d_model,
    }
}

/// Same contract as [`super::run_pipeline`].
pub fn oracle_pipeline(
    archive: &Archive,
    cc: &CompressionConfig,
    schedule: &DropSchedule,
    selector: SalientSelector,
) -> Result<PipelineTrace> {
    let inputs = PipelineInputs::from_archive(archive, schedule.stages().len())?;
    let compression = oracle_compress(&inputs.tokens, &inputs.attn_v2v, cc)?;
    let mut sources = compression.dominant_indices.clone();
    sources.extend_from_slice(&compression.centroid_indices);
    let t2v = &inputs.t2v;
    let prune = oracle_prune(
        compression.output_tokens.rows(),
        &inputs.text,
        |stage, positions| {
            let full = t2v
                .get(stage)
                .ok_or_else(|| Error::MissingEntry(super::t2v_entry(stage)))?;
            let mut data = Vec::new();
            for r in 0..full.rows() {
                for &p in positions {
                    data.push(full.matrix().get(r, sources[p]));
                }
            }
            AttentionMap::new(Matrix::new(full.rows(), positions.len(), data)?)
        },
        schedule,
        selector,
    )?;
    let budget = oracle_budget(cc.k1 + cc.k2, schedule, inputs.tokens.rows(), DEFAULT_D_MODEL);
    Ok(PipelineTrace {
        compression,
        prune,
        budget,
    })
}
