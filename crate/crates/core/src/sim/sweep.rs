//! Structural parameter sweeps over one archive.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::prune::{DropSchedule, SalientSelector, ScheduleKind, Stage};
use crate::tensor::Archive;
use crate::vision::CompressionConfig;

use super::{oracle_pipeline, run_pipeline_on, PipelineInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Dominant count, keeping `k1 + k2` fixed.
    K1,
    /// Contextual count, keeping `k1 + k2` fixed.
    K2,
    W,
    /// Per-stage drop fraction, applied multiplicatively at the baseline
    /// schedule's boundaries.
    Lambda,
    /// Whole schedules.
    StageLayout,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k1" => Ok(SweepAxis::K1),
            "k2" => Ok(SweepAxis::K2),
            "w" => Ok(SweepAxis::W),
            "lambda" => Ok(SweepAxis::Lambda),
            "stage_layout" => Ok(SweepAxis::StageLayout),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (k1, k2, w, lambda, stage_layout)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::K1 => "k1",
            SweepAxis::K2 => "k2",
            SweepAxis::W => "w",
            SweepAxis::Lambda => "lambda",
            SweepAxis::StageLayout => "stage_layout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    AvgTokens,
    DropCount,
    /// Jaccard overlap of final survivors between the pipeline and the oracle.
    SurvivorOverlapWithOracle,
}

impl FromStr for SweepMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg_tokens" => Ok(SweepMetric::AvgTokens),
            "drop_count" => Ok(SweepMetric::DropCount),
            "survivor_overlap_with_oracle" => Ok(SweepMetric::SurvivorOverlapWithOracle),
            other => Err(Error::Config(format!(
                "unknown sweep metric {other:?} (avg_tokens, drop_count, survivor_overlap_with_oracle)"
            ))),
        }
    }
}

impl fmt::Display for SweepMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMetric::AvgTokens => "avg_tokens",
            SweepMetric::DropCount => "drop_count",
            SweepMetric::SurvivorOverlapWithOracle => "survivor_overlap_with_oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Count(usize),
    Ratio(f64),
    Layout(DropSchedule),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Count(c) => write!(f, "{c}"),
            SweepValue::Ratio(r) => write!(f, "{r}"),
            SweepValue::Layout(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    pub base: CompressionConfig,
    pub schedule: DropSchedule,
    pub selector: SalientSelector,
    pub metric: SweepMetric,
}

impl SweepSpec {
    /// Parses axis values: comma-separated numbers, or `;`-separated
    /// schedules for `stage_layout`.
    pub fn parse_values(axis: SweepAxis, raw: &str, total_layers: usize) -> Result<Vec<SweepValue>> {
        let bad = |v: &str| Error::Config(format!("sweep value {v:?} is not valid for axis {axis}"));
        let values: Vec<SweepValue> = match axis {
            SweepAxis::K1 | SweepAxis::K2 | SweepAxis::W => raw
                .split(',')
                .map(|v| v.trim().parse().map(SweepValue::Count).map_err(|_| bad(v)))
                .collect::<Result<_>>()?,
            SweepAxis::Lambda => raw
                .split(',')
                .map(|v| match v.trim().parse::<f64>() {
                    Ok(l) if (0.0..=1.0).contains(&l) => Ok(SweepValue::Ratio(l)),
                    _ => Err(bad(v)),
                })
                .collect::<Result<_>>()?,
            SweepAxis::StageLayout => raw
                .split(';')
                .map(|v| {
                    DropSchedule::parse(v, total_layers, ScheduleKind::Absolute)
                        .map(SweepValue::Layout)
                })
                .collect::<Result<_>>()?,
        };
        if values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        Ok(values)
    }

    /// Compression config and schedule for one sweep point.
    pub fn point(&self, value: &SweepValue) -> Result<(CompressionConfig, DropSchedule)> {
        let total = self.base.k1 + self.base.k2;
        let mut cc = self.base;
        let mut schedule = self.schedule.clone();
        let mismatch = || Error::Config(format!("value {value} does not fit axis {}", self.axis));
        match (self.axis, value) {
            (SweepAxis::K1, &SweepValue::Count(k1)) => {
                cc.k1 = k1;
                cc.k2 = total.checked_sub(k1).ok_or_else(|| {
                    Error::Config(format!("k1 = {k1} exceeds fixed k1 + k2 = {total}"))
                })?;
            }
            (SweepAxis::K2, &SweepValue::Count(k2)) => {
                cc.k2 = k2;
                cc.k1 = total.checked_sub(k2).ok_or_else(|| {
                    Error::Config(format!("k2 = {k2} exceeds fixed k1 + k2 = {total}"))
                })?;
            }
            (SweepAxis::W, &SweepValue::Count(w)) => cc.w = w,
            (SweepAxis::Lambda, &SweepValue::Ratio(lambda)) => {
                let stages = self
                    .schedule
                    .stages()
                    .iter()
                    .map(|s| Stage {
                        boundary: s.boundary,
                        ratio: 1.0 - lambda,
                    })
                    .collect();
                schedule = DropSchedule::new(
                    self.schedule.total_layers(),
                    stages,
                    ScheduleKind::Multiplicative,
                )?;
            }
            (SweepAxis::StageLayout, SweepValue::Layout(s)) => schedule = s.clone(),
            _ => return Err(mismatch()),
        }
        Ok((cc, schedule))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: SweepValue,
    pub result: core::result::Result<f64, Error>,
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Evaluates one sweep point.
pub fn sweep_point(spec: &SweepSpec, archive: &Archive, value: &SweepValue) -> Result<f64> {
    let (cc, schedule) = spec.point(value)?;
    let inputs = PipelineInputs::from_archive(archive, schedule.stages().len())?;
    let trace = run_pipeline_on(&inputs, &cc, &schedule, spec.selector)?;
    Ok(match spec.metric {
        SweepMetric::AvgTokens => trace.budget.average,
        SweepMetric::DropCount => trace.compression.dropped_indices.len() as f64,
        SweepMetric::SurvivorOverlapWithOracle => {
            let reference = oracle_pipeline(archive, &cc, &schedule, spec.selector)?;
            jaccard(trace.final_survivors(), reference.final_survivors())
        }
    })
}

/// Runs every value in order. A failing point is reported in its row and the
/// sweep carries on.
pub fn sweep(spec: &SweepSpec, archive: &Archive) -> Vec<SweepRow> {
    spec.values
        .iter()
        .map(|v| SweepRow {
            value: v.clone(),
            result: sweep_point(spec, archive, v),
        })
        .collect()
}

/// Human-readable error text for a failed row.
pub fn row_status(row: &SweepRow) -> String {
    match &row.result {
        Ok(_) => String::from("ok"),
        Err(e) => format!("{e}"),
    }
}
