//! Command-line frontend.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use duet_core::sim::{
    generate, run_pipeline_on, sweep_point, PipelineInputs, SimConfig, SweepAxis, SweepMetric,
    SweepRow, SweepSpec,
};
use duet_core::tensor::DEFAULT_MAX_ELEMENTS;
use duet_core::{
    budget_report, compress_vision, plan_entry_tokens, run_prune, Archive, ClusterMode,
    CompressionConfig, DType, DropSchedule, ReadOptions, SalientSelector, ScheduleKind,
};
use duet_core::budget::DEFAULT_D_MODEL;
use rayon::prelude::*;

use crate::error::CliError;
use crate::io::{read_archive_file, read_file, write_archive_file, write_atomic, Loaded};
use crate::outputs::{add_budget_counts, add_compression, add_prune, heatmap_archive, ArchiveStages};
use crate::report::{fmt_num, write_budget_jsonl, write_budget_text, write_sweep_csv};

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "duet", version, about = "Dual-stage visual token compression over tensor archives")]
pub struct Cli {
    #[command(flatten)]
    pub read: ReadArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ReadArgs {
    /// Largest element count accepted for any one input tensor
    #[arg(long, global = true, env = "DUET_MAX_ELEMENTS", default_value_t = DEFAULT_MAX_ELEMENTS)]
    pub max_elements: u64,
    /// Accept NaN and infinite elements when reading
    #[arg(long, global = true)]
    pub allow_non_finite: bool,
}

impl ReadArgs {
    fn options(&self) -> ReadOptions {
        ReadOptions {
            max_elements: self.max_elements,
            allow_non_finite: self.allow_non_finite,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dominant selection and residual clustering of `tokens` by `attn_v2v`
    Compress {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        compress: CompressArgs,
    },
    /// Staged dropping of `x_out` using per-stage `attn_text_<i>` / `attn_t2v_<i>`
    Prune {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Compression, staged dropping and budget in one pass
    Pipeline {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        compress: CompressArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Layer-averaged token budget for an entry count
    Budget {
        /// Visual tokens entering the backbone
        #[arg(long)]
        n0: usize,
        /// Reference count for reduction and cost [default: n0]
        #[arg(long)]
        base: Option<usize>,
        /// Hidden size for the linear cost term
        #[arg(long, default_value_t = DEFAULT_D_MODEL)]
        d_model: usize,
        /// Plain summary, or one JSON record per layer plus a summary record
        #[arg(long, value_enum, default_value_t = BudgetFormat::Text)]
        format: BudgetFormat,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Smallest entry count reaching a target average budget
    Plan {
        /// Target layer-averaged token count
        #[arg(long, allow_hyphen_values = true)]
        target: f64,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Structural metric over a list of parameter values, as CSV
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        /// k1, k2, w, lambda or stage_layout
        #[arg(long)]
        sweep_axis: SweepAxis,
        /// Comma-separated values; `;`-separated schedules for stage_layout
        #[arg(long, allow_hyphen_values = true)]
        sweep_values: String,
        /// avg_tokens, drop_count or survivor_overlap_with_oracle
        #[arg(long, default_value = "avg_tokens")]
        metric: SweepMetric,
        /// CSV destination [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[command(flatten)]
        compress: CompressArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Per-stage salient-by-visual attention blocks for plotting
    Heatmap {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        compress: CompressArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Write a synthetic input archive
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of attn_text_<i> / attn_t2v_<i> pairs
        #[arg(long, default_value_t = 2)]
        stages: usize,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// List the tensors in a .duet or .dueta file
    Inspect {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Overlapping,
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Absolute,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BudgetFormat {
    Text,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Dominant tokens kept verbatim
    #[arg(long, default_value_t = 300)]
    pub k1: usize,
    /// Contextual tokens formed by merging
    #[arg(long, default_value_t = 7)]
    pub k2: usize,
    /// Tokens per cluster
    #[arg(long, default_value_t = 4)]
    pub w: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Overlapping)]
    pub cluster_mode: ModeArg,
}

impl CompressArgs {
    pub fn config(&self) -> Result<CompressionConfig> {
        if self.w == 0 {
            return Err(CliError::usage("--w", "must be at least 1"));
        }
        if self.k1.checked_add(self.k2).map_or(true, |t| t == 0) {
            return Err(CliError::usage("--k1/--k2", "k1 + k2 must be at least 1"));
        }
        let mode = match self.cluster_mode {
            ModeArg::Overlapping => ClusterMode::Overlapping,
            ModeArg::Disjoint => ClusterMode::Disjoint,
        };
        Ok(CompressionConfig::new(self.k1, self.k2, self.w).with_mode(mode))
    }
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Comma-separated layer:ratio stages
    #[arg(long, default_value = "16:0.5,24:0", allow_hyphen_values = true)]
    pub schedule: String,
    /// Backbone layer count
    #[arg(long, default_value_t = 32)]
    pub layers: usize,
    /// Ratios of the entry count (absolute) or of the previous stage (multiplicative)
    #[arg(long, value_enum, default_value_t = KindArg::Absolute)]
    pub schedule_kind: KindArg,
}

impl ScheduleArgs {
    pub fn schedule(&self) -> Result<DropSchedule> {
        let kind = match self.schedule_kind {
            KindArg::Absolute => ScheduleKind::Absolute,
            KindArg::Multiplicative => ScheduleKind::Multiplicative,
        };
        DropSchedule::parse(&self.schedule, self.layers, kind)
            .map_err(|e| CliError::usage("--schedule", e))
    }
}

#[derive(Debug, Args)]
pub struct SelectorArgs {
    /// Salient text tokens: last, all or topk:<s>
    #[arg(long, default_value = "last")]
    pub selector: SalientSelector,
    /// Leading text positions that topk:<s> never picks
    #[arg(long, default_value_t = 0)]
    pub system_prefix: usize,
}

impl SelectorArgs {
    pub fn selector(&self) -> SalientSelector {
        match self.selector {
            SalientSelector::TopSaliency { count, .. } => SalientSelector::TopSaliency {
                count,
                system_prefix: self.system_prefix,
            },
            other => other,
        }
    }
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Input archive
    #[arg(long = "in", value_name = "PATH", required_unless_present = "seed", conflicts_with = "seed")]
    pub input: Option<PathBuf>,
    /// Use a synthetic archive generated from this seed instead of --in
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Synthetic visual token count
    #[arg(long, default_value_t = 576)]
    pub n_tokens: usize,
    /// Synthetic token width
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Synthetic text token count
    #[arg(long, default_value_t = 8)]
    pub m_text: usize,
    /// Synthetic high-attention tokens
    #[arg(long, default_value_t = 2)]
    pub hotspots: usize,
    /// Synthetic logit noise scale
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
}

impl SimArgs {
    fn config(&self, seed: u64, stages: usize) -> SimConfig {
        SimConfig {
            seed,
            n_tokens: self.n_tokens,
            d: self.dim,
            m_text: self.m_text,
            hotspot_count: self.hotspots,
            noise_scale: self.noise,
            stages,
        }
    }
}

impl SourceArgs {
    fn load(&self, opts: &ReadOptions, stages: usize) -> Result<Archive> {
        match (&self.input, self.seed) {
            (Some(path), _) => read_archive_file(path, opts).map_err(|e| CliError::file(path, e)),
            (None, Some(seed)) => Ok(generate(&self.sim.config(seed, stages))?),
            (None, None) => Err(CliError::usage("--in", "either --in or --seed is required")),
        }
    }
}

fn save(path: &Path, archive: &Archive) -> Result<()> {
    write_archive_file(path, archive).map_err(|e| CliError::file(path, e))
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::file("<stdout>", e)
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
        DType::I64 => "i64",
    }
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let opts = cli.read.options();
    match &cli.command {
        Command::Compress {
            input,
            out: dest,
            compress,
        } => {
            let cc = compress.config()?;
            let archive = read_archive_file(input, &opts).map_err(|e| CliError::file(input, e))?;
            let tokens = duet_core::sim::matrix_entry(&archive, "tokens")?;
            let attn = duet_core::sim::attention_entry(&archive, "attn_v2v")?;
            let r = compress_vision(&tokens, &attn, &cc)?;
            let mut result = Archive::new();
            add_compression(&mut result, &r)?;
            save(dest, &result)?;
            writeln!(
                out,
                "tokens {} -> {} (dominant {}, merged {}, dropped {})",
                tokens.rows(),
                r.output_tokens.rows(),
                r.dominant_indices.len(),
                r.centroid_indices.len(),
                r.dropped_indices.len()
            )
            .map_err(stdout_err)?;
        }
        Command::Prune {
            input,
            out: dest,
            schedule,
            selector,
        } => {
            let schedule = schedule.schedule()?;
            let archive = read_archive_file(input, &opts).map_err(|e| CliError::file(input, e))?;
            let x_out = duet_core::sim::matrix_entry(&archive, "x_out")?;
            let trace = run_prune(&x_out, &ArchiveStages(&archive), &schedule, selector.selector())?;
            let mut result = Archive::new();
            add_prune(&mut result, &trace)?;
            add_budget_counts(&mut result, &schedule.per_layer_counts(x_out.rows()))?;
            save(dest, &result)?;
            let counts: Vec<String> = trace.states.iter().map(|s| s.count().to_string()).collect();
            writeln!(out, "tokens {}", counts.join(" -> ")).map_err(stdout_err)?;
        }
        Command::Pipeline {
            source,
            out: dest,
            compress,
            schedule,
            selector,
        } => {
            let cc = compress.config()?;
            let schedule = schedule.schedule()?;
            let archive = source.load(&opts, schedule.stages().len())?;
            let inputs = PipelineInputs::from_archive(&archive, schedule.stages().len())?;
            let trace = run_pipeline_on(&inputs, &cc, &schedule, selector.selector())?;
            let mut result = Archive::new();
            add_compression(&mut result, &trace.compression)?;
            add_prune(&mut result, &trace.prune)?;
            add_budget_counts(&mut result, &trace.budget.per_layer_counts)?;
            save(dest, &result)?;
            let counts: Vec<String> =
                trace.prune.states.iter().map(|s| s.count().to_string()).collect();
            writeln!(
                out,
                "tokens {} -> {}\naverage {}",
                inputs.tokens.rows(),
                counts.join(" -> "),
                fmt_num(trace.budget.average)
            )
            .map_err(stdout_err)?;
        }
        Command::Budget {
            n0,
            base,
            d_model,
            format,
            schedule,
        } => {
            let schedule = schedule.schedule()?;
            let report = budget_report(*n0, &schedule, base.unwrap_or(*n0), *d_model);
            match format {
                BudgetFormat::Text => write_budget_text(out, &report, &schedule),
                BudgetFormat::Jsonl => write_budget_jsonl(out, &report, &schedule),
            }
            .map_err(stdout_err)?;
        }
        Command::Plan { target, schedule } => {
            let schedule = schedule.schedule()?;
            let n0 = plan_entry_tokens(*target, &schedule)?;
            writeln!(out, "{n0}").map_err(stdout_err)?;
        }
        Command::Sweep {
            source,
            sweep_axis,
            sweep_values,
            metric,
            out: dest,
            compress,
            schedule,
            selector,
        } => {
            let schedule = schedule.schedule()?;
            let values = SweepSpec::parse_values(*sweep_axis, sweep_values, schedule.total_layers())
                .map_err(|e| CliError::usage("--sweep-values", e))?;
            let spec = SweepSpec {
                axis: *sweep_axis,
                values,
                base: compress.config()?,
                schedule,
                selector: selector.selector(),
                metric: *metric,
            };
            let stages = spec
                .values
                .iter()
                .filter_map(|v| spec.point(v).ok())
                .map(|(_, s)| s.stages().len())
                .max()
                .unwrap_or(0);
            let archive = source.load(&opts, stages)?;
            let rows: Vec<SweepRow> = spec
                .values
                .par_iter()
                .map(|v| SweepRow {
                    value: v.clone(),
                    result: sweep_point(&spec, &archive, v),
                })
                .collect();
            match dest {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_sweep_csv(&mut buf, spec.metric, &rows)
                        .map_err(|e| CliError::file(path, io::Error::other(e)))?;
                    write_atomic(path, &buf).map_err(|e| CliError::file(path, e))?;
                }
                None => write_sweep_csv(out, spec.metric, &rows)
                    .map_err(|e| stdout_err(io::Error::other(e)))?,
            }
        }
        Command::Heatmap {
            source,
            out: dest,
            compress,
            schedule,
            selector,
        } => {
            let cc = compress.config()?;
            let schedule = schedule.schedule()?;
            let archive = source.load(&opts, schedule.stages().len())?;
            let inputs = PipelineInputs::from_archive(&archive, schedule.stages().len())?;
            let trace = run_pipeline_on(&inputs, &cc, &schedule, selector.selector())?;
            save(dest, &heatmap_archive(&inputs, &trace)?)?;
        }
        Command::Generate {
            seed,
            stages,
            out: dest,
            sim,
        } => {
            let archive = generate(&sim.config(*seed, *stages))?;
            save(dest, &archive)?;
        }
        Command::Inspect { input } => {
            let loaded = read_file(input, &opts).map_err(|e| CliError::file(input, e))?;
            let entries: Vec<(String, &duet_core::Tensor)> = match &loaded {
                Loaded::Tensor(t) => vec![(String::from("-"), t)],
                Loaded::Archive(a) => a.iter().map(|(n, t)| (n.to_string(), t)).collect(),
            };
            for (name, t) in entries {
                writeln!(out, "{name}\t{}\t{:?}", dtype_name(t.dtype()), t.shape())
                    .map_err(stdout_err)?;
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the exit status: 0 ok,
/// 2 usage, 3 bad input, 4 dimension or configuration mismatch, 5 internal
/// invariant violation.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return e.exit_code() as u8;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let code = run_args(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    ExitCode::from(code)
}
