//! Language-side rank-and-drop of visual tokens.
//!
//! At each configured layer boundary the retained visual tokens are scored by
//! the mean cross-attention they receive from a salient subset of text tokens.
//! The top share is kept and the rest are discarded. The last text token is
//! always part of the salient subset.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, Matrix, ScoreVector};
use crate::topk::top_k;
use crate::vision::attention_scores;

/// How the salient text subset is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SalientSelector {
    /// Only the last text token.
    LastToken,
    /// Every text token.
    AllTokens,
    /// The `count` text tokens receiving the most text-to-text attention, plus
    /// the last token. The first `system_prefix` positions (system prompt)
    /// are never ranked.
    TopSaliency { count: usize, system_prefix: usize },
}

impl SalientSelector {
    pub fn top(count: usize) -> Self {
        SalientSelector::TopSaliency {
            count,
            system_prefix: 0,
        }
    }
}

impl FromStr for SalientSelector {
    type Err = Error;

    /// Accepts `last`, `all` or `topk:<s>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "last" => Ok(SalientSelector::LastToken),
            "all" => Ok(SalientSelector::AllTokens),
            other => other
                .strip_prefix("topk:")
                .and_then(|n| n.parse().ok())
                .map(SalientSelector::top)
                .ok_or_else(|| {
                    Error::Config(format!("selector {other:?}: expected last, all or topk:<s>"))
                }),
        }
    }
}

impl fmt::Display for SalientSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SalientSelector::LastToken => f.write_str("last"),
            SalientSelector::AllTokens => f.write_str("all"),
            SalientSelector::TopSaliency { count, .. } => write!(f, "topk:{count}"),
        }
    }
}

/// How stage ratios translate into retained counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    /// Stage `i` keeps `floor(ratio_i * n0)` of the tokens that entered the
    /// backbone, never more than the previous stage.
    #[default]
    Absolute,
    /// Stage `i` keeps `floor(ratio_i * n_{i-1})` of the tokens entering it.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    /// Drop happens after this layer (1-based).
    pub boundary: usize,
    pub ratio: f64,
}

/// Layer boundaries with retention ratios, e.g. `16:0.5,24:0` over 32 layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropSchedule {
    total_layers: usize,
    stages: Vec<Stage>,
    kind: ScheduleKind,
}

impl DropSchedule {
    pub fn new(total_layers: usize, stages: Vec<Stage>, kind: ScheduleKind) -> Result<Self> {
        if total_layers == 0 {
            return Err(Error::Config("schedule needs at least one layer".into()));
        }
        let mut prev = 0;
        for s in &stages {
            if s.boundary <= prev {
                return Err(Error::Config(format!(
                    "stage boundaries must be strictly increasing and >= 1 (got {} after {prev})",
                    s.boundary
                )));
            }
            if s.boundary > total_layers {
                return Err(Error::Config(format!(
                    "stage boundary {} exceeds layer count {total_layers}",
                    s.boundary
                )));
            }
            if !(0.0..=1.0).contains(&s.ratio) {
                return Err(Error::Config(format!(
                    "retention ratio {} at layer {} is outside [0, 1]",
                    s.ratio, s.boundary
                )));
            }
            prev = s.boundary;
        }
        Ok(DropSchedule {
            total_layers,
            stages,
            kind,
        })
    }

    /// Parses `layer:ratio` pairs separated by commas. An empty string is a
    /// schedule with no stages.
    pub fn parse(spec: &str, total_layers: usize, kind: ScheduleKind) -> Result<Self> {
        let spec = spec.trim();
        let mut stages = Vec::new();
        if !spec.is_empty() {
            for pair in spec.split(',') {
                let (layer, ratio) = pair.split_once(':').ok_or_else(|| {
                    Error::Config(format!("schedule entry {pair:?}: expected layer:ratio"))
                })?;
                let boundary = layer.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("schedule entry {pair:?}: bad layer {layer:?}"))
                })?;
                let ratio = ratio.trim().parse::<f64>().map_err(|_| {
                    Error::Config(format!("schedule entry {pair:?}: bad ratio {ratio:?}"))
                })?;
                stages.push(Stage { boundary, ratio });
            }
        }
        DropSchedule::new(total_layers, stages, kind)
    }

    pub fn identity(total_layers: usize) -> Self {
        DropSchedule {
            total_layers: total_layers.max(1),
            stages: Vec::new(),
            kind: ScheduleKind::Absolute,
        }
    }

    pub fn total_layers(&self) -> usize {
        self.total_layers
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Retained count after every stage for `n0` entering tokens.
    pub fn retained_counts(&self, n0: usize) -> Vec<usize> {
        let mut prev = n0;
        self.stages
            .iter()
            .map(|s| {
                let base = match self.kind {
                    ScheduleKind::Absolute => n0,
                    ScheduleKind::Multiplicative => prev,
                };
                // ratio * base is non-negative and finite, so truncation is floor.
                prev = ((s.ratio * base as f64) as usize).min(prev);
                prev
            })
            .collect()
    }

    /// Token count carried by each layer, 1-based layers in order.
    pub fn per_layer_counts(&self, n0: usize) -> Vec<usize> {
        let counts = self.retained_counts(n0);
        let mut out = Vec::with_capacity(self.total_layers);
        let mut current = n0;
        let mut next = 0;
        for layer in 1..=self.total_layers {
            out.push(current);
            if next < self.stages.len() && self.stages[next].boundary == layer {
                current = counts[next];
                next += 1;
            }
        }
        out
    }
}

impl fmt::Display for DropSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", s.boundary, s.ratio)?;
        }
        Ok(())
    }
}

/// Visual tokens alive at some layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageState {
    pub layer: usize,
    /// Positions into the compressed token sequence, strictly ascending.
    pub retained: Vec<usize>,
}

impl StageState {
    pub fn initial(n0: usize) -> Self {
        StageState {
            layer: 0,
            retained: (0..n0).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.retained.len()
    }
}

/// Salient text subset, ascending. Always contains `m - 1`.
pub fn select_salient(attn_text: &AttentionMap, selector: SalientSelector) -> Result<Vec<usize>> {
    let m = attn_text.rows();
    if m == 0 {
        return Err(Error::Empty("text sequence"));
    }
    if !attn_text.is_square() {
        return Err(Error::Dimension(format!(
            "text attention must be square, got {m}x{}",
            attn_text.cols()
        )));
    }
    let last = m - 1;
    Ok(match selector {
        SalientSelector::LastToken => alloc::vec![last],
        SalientSelector::AllTokens => (0..m).collect(),
        SalientSelector::TopSaliency {
            count,
            system_prefix,
        } => {
            let received = attention_scores(attn_text)?;
            let candidates: Vec<usize> = (system_prefix.min(m)..m).collect();
            let mut picked = top_k(
                received.as_slice(),
                count.min(candidates.len()),
                Some(&candidates),
            )?;
            picked.push(last);
            picked.sort_unstable();
            picked.dedup();
            picked
        }
    })
}

/// Column means of a salient-rows-by-visual-tokens attention block.
pub fn t2v_scores(attn_t2v: &AttentionMap) -> Result<ScoreVector> {
    if attn_t2v.rows() == 0 {
        return Err(Error::Empty("salient text rows"));
    }
    let mut scores = alloc::vec![0.0; attn_t2v.cols()];
    for r in 0..attn_t2v.rows() {
        for (s, &v) in scores.iter_mut().zip(attn_t2v.row(r)) {
            *s += v;
        }
    }
    let n = attn_t2v.rows() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    Ok(ScoreVector(scores))
}

/// Tokens kept after stage `stage_index` for `n0` entering tokens.
pub fn retained_count(schedule: &DropSchedule, stage_index: usize, n0: usize) -> Result<usize> {
    schedule
        .retained_counts(n0)
        .get(stage_index)
        .copied()
        .ok_or_else(|| {
            Error::Config(format!(
                "stage {stage_index} out of range for a {}-stage schedule",
                schedule.stages().len()
            ))
        })
}

/// Keeps the `keep` best-scoring tokens, survivors in original order.
pub fn drop_stage(state: &StageState, scores: &ScoreVector, keep: usize) -> Result<StageState> {
    if scores.len() != state.count() {
        return Err(Error::Dimension(format!(
            "{} scores for {} retained tokens",
            scores.len(),
            state.count()
        )));
    }
    if keep > state.count() {
        return Err(Error::KTooLarge {
            k: keep,
            candidates: state.count(),
        });
    }
    let mut retained: Vec<usize> = top_k(scores.as_slice(), keep, None)?
        .into_iter()
        .map(|local| state.retained[local])
        .collect();
    retained.sort_unstable();
    Ok(StageState {
        layer: state.layer,
        retained,
    })
}

/// Attention blocks handed to one drop stage.
#[derive(Debug, Clone)]
pub struct StageMaps<'a> {
    /// `m x m` text self-attention.
    pub text: Cow<'a, AttentionMap>,
    /// `m x N_l`: every text token against the tokens entering the stage.
    pub t2v: Cow<'a, AttentionMap>,
}

/// Source of per-stage attention. The entering state is passed so that
/// synthetic or recomputed sources can gather the right columns.
pub trait StageAttention {
    fn stage_maps(&self, stage: usize, entering: &StageState) -> Result<StageMaps<'_>>;
}

/// Precomputed pairs whose `t2v` column count equals the tokens entering
/// each stage.
impl StageAttention for [(AttentionMap, AttentionMap)] {
    fn stage_maps(&self, stage: usize, _entering: &StageState) -> Result<StageMaps<'_>> {
        let (text, t2v) = self
            .get(stage)
            .ok_or_else(|| Error::Dimension(format!("no attention supplied for stage {stage}")))?;
        Ok(StageMaps {
            text: Cow::Borrowed(text),
            t2v: Cow::Borrowed(t2v),
        })
    }
}

impl StageAttention for Vec<(AttentionMap, AttentionMap)> {
    fn stage_maps(&self, stage: usize, entering: &StageState) -> Result<StageMaps<'_>> {
        self.as_slice().stage_maps(stage, entering)
    }
}

/// Audit record for one drop stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAudit {
    pub boundary: usize,
    /// Salient text indices; empty when no tokens entered the stage.
    pub salient: Vec<usize>,
    /// One score per entering token.
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrace {
    /// Initial state followed by the state after each stage.
    pub states: Vec<StageState>,
    pub stages: Vec<StageAudit>,
}

impl PruneTrace {
    pub fn final_state(&self) -> &StageState {
        self.states.last().expect("trace always holds the initial state")
    }
}

/// Applies every stage of `schedule` to the rows of `x_out`.
pub fn run_prune<P: StageAttention + ?Sized>(
    x_out: &Matrix,
    attn: &P,
    schedule: &DropSchedule,
    selector: SalientSelector,
) -> Result<PruneTrace> {
    let n0 = x_out.rows();
    let counts = schedule.retained_counts(n0);
    let mut states = alloc::vec![StageState::initial(n0)];
    let mut audits = Vec::with_capacity(counts.len());

    for (i, (stage, &keep)) in schedule.stages().iter().zip(&counts).enumerate() {
        let entering = states.last().expect("non-empty");
        if keep > entering.count() {
            return Err(Error::Invariant(format!(
                "stage {i} keeps {keep} of {} tokens",
                entering.count()
            )));
        }
        if entering.count() == 0 {
            let next = StageState {
                layer: stage.boundary,
                retained: Vec::new(),
            };
            audits.push(StageAudit {
                boundary: stage.boundary,
                salient: Vec::new(),
                scores: ScoreVector::default(),
            });
            states.push(next);
            continue;
        }

        let maps = attn.stage_maps(i, entering)?;
        check_stage_dims(i, &maps, entering.count())?;
        let salient = select_salient(&maps.text, selector)?;
        let scores = t2v_scores(&maps.t2v.select_rows(&salient))?;
        let mut next = drop_stage(entering, &scores, keep)?;
        next.layer = stage.boundary;

        audits.push(StageAudit {
            boundary: stage.boundary,
            salient,
            scores,
        });
        states.push(next);
    }
    Ok(PruneTrace {
        states,
        stages: audits,
    })
}

fn check_stage_dims(stage: usize, maps: &StageMaps<'_>, entering: usize) -> Result<()> {
    let mut problems: Vec<String> = Vec::new();
    if maps.t2v.cols() != entering {
        problems.push(format!(
            "t2v attention has {} columns but {entering} tokens enter",
            maps.t2v.cols()
        ));
    }
    if maps.t2v.rows() != maps.text.rows() {
        problems.push(format!(
            "t2v attention has {} rows but there are {} text tokens",
            maps.t2v.rows(),
            maps.text.rows()
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("stage {stage}: {}", problems.join("; "))))
    }
}
