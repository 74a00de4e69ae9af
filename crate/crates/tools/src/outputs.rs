//! Result archives written by the subcommands.
//!
//! Index lists are `i64`. A list with no elements is stored as the one-element
//! tensor `[-1]`, since every dimension must be at least 1. `cluster_members`
//! is `k2 x width`, right-padded with `-1`, where `width` is the longest
//! cluster.

use std::borrow::Cow;

use duet_core::prune::{StageAttention, StageMaps};
use duet_core::sim::{attention_entry, t2v_entry, text_entry, GatheredAttention, PipelineInputs, PipelineTrace};
use duet_core::{Archive, CompressionResult, Error, PruneTrace, StageState, Tensor};

pub const EMPTY_INDEX: i64 = -1;

type Result<T> = std::result::Result<T, Error>;

pub fn index_tensor(idx: &[usize]) -> Tensor {
    if idx.is_empty() {
        return Tensor::from_i64(vec![1], vec![EMPTY_INDEX]).expect("one element");
    }
    let v = idx.iter().map(|&i| i as i64).collect();
    Tensor::from_i64(vec![idx.len()], v).expect("length matches")
}

pub fn members_tensor(members: &[Vec<usize>]) -> Tensor {
    let width = members.iter().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return index_tensor(&[]);
    }
    let mut data = Vec::with_capacity(members.len() * width);
    for m in members {
        data.extend(m.iter().map(|&i| i as i64));
        data.extend(std::iter::repeat(EMPTY_INDEX).take(width - m.len()));
    }
    Tensor::from_i64(vec![members.len(), width], data).expect("padded rows")
}

fn float_vec(v: &[f64]) -> Option<Tensor> {
    (!v.is_empty()).then(|| Tensor::from_f64(vec![v.len()], v.to_vec()).expect("length matches"))
}

/// `out_tokens`, `dominant_idx`, `centroid_idx`, `cluster_members`,
/// `dropped_idx`, `v2v_scores`.
pub fn add_compression(a: &mut Archive, r: &CompressionResult) -> Result<()> {
    a.insert("out_tokens", r.output_tokens.to_tensor()?)?;
    a.insert("dominant_idx", index_tensor(&r.dominant_indices))?;
    a.insert("centroid_idx", index_tensor(&r.centroid_indices))?;
    a.insert("cluster_members", members_tensor(&r.cluster_members))?;
    a.insert("dropped_idx", index_tensor(&r.dropped_indices))?;
    if let Some(t) = float_vec(r.scores.as_slice()) {
        a.insert("v2v_scores", t)?;
    }
    Ok(())
}

/// `survivors_<i>` for every stage; `scores_<i>` for stages that had tokens
/// to score.
pub fn add_prune(a: &mut Archive, t: &PruneTrace) -> Result<()> {
    for (i, (state, audit)) in t.states[1..].iter().zip(&t.stages).enumerate() {
        a.insert(format!("survivors_{i}"), index_tensor(&state.retained))?;
        if let Some(s) = float_vec(audit.scores.as_slice()) {
            a.insert(format!("scores_{i}"), s)?;
        }
    }
    Ok(())
}

pub fn add_budget_counts(a: &mut Archive, counts: &[usize]) -> Result<()> {
    a.insert("budget_counts", index_tensor(counts))?;
    Ok(())
}

/// Stage maps read straight from an archive whose `attn_t2v_<i>` columns
/// already match the tokens entering each stage.
pub struct ArchiveStages<'a>(pub &'a Archive);

impl StageAttention for ArchiveStages<'_> {
    fn stage_maps(&self, stage: usize, _entering: &StageState) -> Result<StageMaps<'_>> {
        Ok(StageMaps {
            text: Cow::Owned(attention_entry(self.0, &text_entry(stage))?),
            t2v: Cow::Owned(attention_entry(self.0, &t2v_entry(stage))?),
        })
    }
}

/// Per stage with entering tokens: `scores_<i>` (salient rows by entering
/// tokens), `salient_<i>`, `positions_<i>` and `sources_<i>`. Also
/// `v2v_scores`.
pub fn heatmap_archive(inputs: &PipelineInputs, trace: &PipelineTrace) -> Result<Archive> {
    let mut a = Archive::new();
    if let Some(t) = float_vec(trace.compression.scores.as_slice()) {
        a.insert("v2v_scores", t)?;
    }
    let gathered = GatheredAttention {
        text: &inputs.text,
        t2v: &inputs.t2v,
        sources: trace.compression.source_indices(),
    };
    for (i, audit) in trace.prune.stages.iter().enumerate() {
        let entering = &trace.prune.states[i];
        if entering.count() == 0 {
            continue;
        }
        let maps = gathered.stage_maps(i, entering)?;
        let block = maps.t2v.select_rows(&audit.salient);
        let sources: Vec<usize> = entering.retained.iter().map(|&p| gathered.sources[p]).collect();
        a.insert(format!("scores_{i}"), block.matrix().to_tensor()?)?;
        a.insert(format!("salient_{i}"), index_tensor(&audit.salient))?;
        a.insert(format!("positions_{i}"), index_tensor(&entering.retained))?;
        a.insert(format!("sources_{i}"), index_tensor(&sources))?;
    }
    Ok(a)
}
