//! Synthetic data, the end-to-end pipeline runner and its brute-force twin.
//!
//! Archives produced by [`generate`] hold:
//!
//! | entry           | shape   | meaning                                         |
//! |-----------------|---------|-------------------------------------------------|
//! | `tokens`        | N x d   | visual tokens                                   |
//! | `attn_v2v`      | N x N   | vision self-attention, rows softmax-normalised  |
//! | `attn_text_<i>` | m x m   | text self-attention at stage `i`                |
//! | `attn_t2v_<i>`  | m x N   | text-to-visual attention at stage `i`           |
//! | `hotspot_idx`   | h       | hotspot token indices (only when h > 0)         |
//!
//! In these archives `attn_t2v_<i>` is indexed by *original* visual token.
//! [`run_pipeline`] gathers the columns for whichever compressed tokens enter
//! each stage: a dominant token reads its own column, a merged token reads
//! its centroid's column.
//!
//! Generation order, all draws from one [`SplitMix64`] seeded with
//! `SimConfig::seed`:
//!
//! 1. hotspot indices by partial Fisher-Yates: for `k` in `0..h`, swap slot
//!    `k` with `k + below(N - k)` in `[0, 1, .., N-1]`;
//! 2. `tokens`, row-major, `2u - 1`;
//! 3. `attn_v2v`, row-major logits `noise * u + boost * hot(j)`;
//! 4. per stage: `attn_text_<i>` logits `noise * u`, then `attn_t2v_<i>`
//!    logits `noise * u + boost * hot(j)`.
//!
//! `boost = noise + HOTSPOT_BOOST`, so a hotspot column beats every
//! non-hotspot column in every row. Rows are softmaxed with the row maximum
//! subtracted and `libm::exp`.

mod oracle;
mod rng;
mod sweep;

pub use oracle::{oracle_compress, oracle_pipeline, oracle_prune};
pub use rng::SplitMix64;
pub use sweep::{row_status, sweep, sweep_point, SweepAxis, SweepMetric, SweepRow, SweepSpec, SweepValue};

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::budget::{budget_report, BudgetReport, DEFAULT_D_MODEL};
use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, Matrix};
use crate::prune::{
    run_prune, DropSchedule, PruneTrace, SalientSelector, StageAttention, StageMaps, StageState,
};
use crate::tensor::{Archive, Tensor};
use crate::vision::{compress_vision, CompressionConfig, CompressionResult};

pub const HOTSPOT_BOOST: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub n_tokens: usize,
    pub d: usize,
    pub m_text: usize,
    pub hotspot_count: usize,
    pub noise_scale: f64,
    /// Number of `attn_text_<i>` / `attn_t2v_<i>` pairs.
    pub stages: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            n_tokens: 64,
            d: 8,
            m_text: 6,
            hotspot_count: 2,
            noise_scale: 1.0,
            stages: 3,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.d == 0 || self.m_text == 0 {
            return Err(Error::Config(format!(
                "n_tokens, d and m_text must be >= 1 (got {}, {}, {})",
                self.n_tokens, self.d, self.m_text
            )));
        }
        if self.hotspot_count > self.n_tokens {
            return Err(Error::Config(format!(
                "{} hotspots requested for {} tokens",
                self.hotspot_count, self.n_tokens
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise_scale {} must be finite and >= 0",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

pub fn text_entry(stage: usize) -> String {
    format!("attn_text_{stage}")
}

pub fn t2v_entry(stage: usize) -> String {
    format!("attn_t2v_{stage}")
}

fn softmax_rows(rows: usize, cols: usize, logits: Vec<f64>) -> Matrix {
    let mut data = logits;
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Matrix::new(rows, cols, data).expect("logit count matches shape")
}

/// Builds a synthetic archive. Identical configs give identical bytes.
pub fn generate(cfg: &SimConfig) -> Result<Archive> {
    cfg.validate()?;
    let n = cfg.n_tokens;
    let mut rng = SplitMix64::new(cfg.seed);

    let mut slots: Vec<usize> = (0..n).collect();
    for k in 0..cfg.hotspot_count {
        let j = k + rng.below((n - k) as u64) as usize;
        slots.swap(k, j);
    }
    let mut hotspots = slots[..cfg.hotspot_count].to_vec();
    hotspots.sort_unstable();
    let mut is_hot = alloc::vec![false; n];
    for &h in &hotspots {
        is_hot[h] = true;
    }
    let boost = cfg.noise_scale + HOTSPOT_BOOST;

    let tokens: Vec<f64> = (0..n * cfg.d).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
    let tokens = Matrix::new(n, cfg.d, tokens)?;

    let hot_logits = |rows: usize, rng: &mut SplitMix64| -> Matrix {
        let logits = (0..rows * n)
            .map(|k| {
                let bump = if is_hot[k % n] { boost } else { 0.0 };
                cfg.noise_scale * rng.next_f64() + bump
            })
            .collect();
        softmax_rows(rows, n, logits)
    };

    let v2v = hot_logits(n, &mut rng);
    let mut archive = Archive::new();
    archive.insert("tokens", tokens.to_tensor()?)?;
    archive.insert("attn_v2v", v2v.to_tensor()?)?;

    let m = cfg.m_text;
    for s in 0..cfg.stages {
        let logits = (0..m * m).map(|_| cfg.noise_scale * rng.next_f64()).collect();
        let text = softmax_rows(m, m, logits);
        let t2v = hot_logits(m, &mut rng);
        archive.insert(text_entry(s), text.to_tensor()?)?;
        archive.insert(t2v_entry(s), t2v.to_tensor()?)?;
    }
    if !hotspots.is_empty() {
        let idx = hotspots.iter().map(|&h| h as i64).collect();
        archive.insert("hotspot_idx", Tensor::from_i64(alloc::vec![hotspots.len()], idx)?)?;
    }
    Ok(archive)
}

/// Rank-2 float entry as a matrix.
pub fn matrix_entry(archive: &Archive, name: &str) -> Result<Matrix> {
    let t = archive
        .get(name)
        .ok_or_else(|| Error::MissingEntry(name.into()))?;
    Matrix::from_tensor(t).map_err(|e| Error::BadEntry {
        name: name.into(),
        reason: format!("{e}"),
    })
}

/// Rank-2 float entry as a validated attention map.
pub fn attention_entry(archive: &Archive, name: &str) -> Result<AttentionMap> {
    let m = matrix_entry(archive, name)?;
    AttentionMap::new(m).map_err(|e| Error::BadEntry {
        name: name.into(),
        reason: format!("{e}"),
    })
}

/// Loads `tokens`, `attn_v2v` and the stage maps a schedule needs.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub tokens: Matrix,
    pub attn_v2v: AttentionMap,
    pub text: Vec<AttentionMap>,
    /// `m x N`, indexed by original visual token.
    pub t2v: Vec<AttentionMap>,
}

impl PipelineInputs {
    pub fn from_archive(archive: &Archive, stages: usize) -> Result<Self> {
        let tokens = matrix_entry(archive, "tokens")?;
        let attn_v2v = attention_entry(archive, "attn_v2v")?;
        let n = tokens.rows();
        if attn_v2v.rows() != n || attn_v2v.cols() != n {
            return Err(Error::Dimension(format!(
                "attn_v2v is {}x{} but tokens has {n} rows",
                attn_v2v.rows(),
                attn_v2v.cols()
            )));
        }
        let mut text = Vec::with_capacity(stages);
        let mut t2v = Vec::with_capacity(stages);
        for s in 0..stages {
            let tx = attention_entry(archive, &text_entry(s))?;
            let tv = attention_entry(archive, &t2v_entry(s))?;
            if !tx.is_square() || tv.rows() != tx.rows() || tv.cols() != n {
                return Err(Error::Dimension(format!(
                    "stage {s}: attn_text is {}x{}, attn_t2v is {}x{}; expected m x m and m x {n}",
                    tx.rows(),
                    tx.cols(),
                    tv.rows(),
                    tv.cols()
                )));
            }
            text.push(tx);
            t2v.push(tv);
        }
        Ok(PipelineInputs {
            tokens,
            attn_v2v,
            text,
            t2v,
        })
    }
}

/// Stage attention read from token-indexed maps through a position-to-source
/// table.
pub struct GatheredAttention<'a> {
    pub text: &'a [AttentionMap],
    pub t2v: &'a [AttentionMap],
    /// Original token index for each compressed position.
    pub sources: Vec<usize>,
}

impl StageAttention for GatheredAttention<'_> {
    fn stage_maps(&self, stage: usize, entering: &StageState) -> Result<StageMaps<'_>> {
        let (text, t2v) = self
            .text
            .get(stage)
            .zip(self.t2v.get(stage))
            .ok_or_else(|| Error::MissingEntry(t2v_entry(stage)))?;
        let cols: Vec<usize> = entering.retained.iter().map(|&p| self.sources[p]).collect();
        Ok(StageMaps {
            text: Cow::Borrowed(text),
            t2v: Cow::Owned(t2v.select_cols(&cols)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub compression: CompressionResult,
    pub prune: PruneTrace,
    pub budget: BudgetReport,
}

impl PipelineTrace {
    pub fn final_survivors(&self) -> &[usize] {
        &self.prune.final_state().retained
    }

    /// Equality that also distinguishes float bit patterns (`0.0` vs `-0.0`).
    pub fn bit_identical(&self, other: &PipelineTrace) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        let (c, o) = (&self.compression, &other.compression);
        self == other
            && same(c.scores.as_slice(), o.scores.as_slice())
            && same(c.output_tokens.as_slice(), o.output_tokens.as_slice())
            && same(c.merged_tokens.as_slice(), o.merged_tokens.as_slice())
            && self
                .prune
                .stages
                .iter()
                .zip(&other.prune.stages)
                .all(|(a, b)| same(a.scores.as_slice(), b.scores.as_slice()))
            && self.budget.average.to_bits() == other.budget.average.to_bits()
            && self.budget.flop_proxy.to_bits() == other.budget.flop_proxy.to_bits()
    }
}

/// Vision compression, staged dropping and budget for one archive.
pub fn run_pipeline(
    archive: &Archive,
    cc: &CompressionConfig,
    schedule: &DropSchedule,
    selector: SalientSelector,
) -> Result<PipelineTrace> {
    let inputs = PipelineInputs::from_archive(archive, schedule.stages().len())?;
    run_pipeline_on(&inputs, cc, schedule, selector)
}

pub fn run_pipeline_on(
    inputs: &PipelineInputs,
    cc: &CompressionConfig,
    schedule: &DropSchedule,
    selector: SalientSelector,
) -> Result<PipelineTrace> {
    let compression = compress_vision(&inputs.tokens, &inputs.attn_v2v, cc)?;
    let attn = GatheredAttention {
        text: &inputs.text,
        t2v: &inputs.t2v,
        sources: compression.source_indices(),
    };
    let prune = run_prune(&compression.output_tokens, &attn, schedule, selector)?;
    let budget = budget_report(
        cc.output_len(),
        schedule,
        inputs.tokens.rows(),
        DEFAULT_D_MODEL,
    );
    Ok(PipelineTrace {
        compression,
        prune,
        budget,
    })
}
