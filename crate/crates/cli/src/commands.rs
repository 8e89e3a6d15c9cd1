//! Subcommand implementations for the `bwshare` binary.
//!
//! Every subcommand resolves its catalog (built-in plus `--catalog`
//! overlays), computes, and emits a versioned CSV document to `--out`.
//! Output is deterministic: equal flags (and seeds) yield byte-identical
//! documents.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bwshare_core::analysis::{duration_skewness, predict_skew_sign, SandwichScenario};
use bwshare_core::catalog::{Catalog, KernelDescription, MachineDescription};
use bwshare_core::ecm::{degenerate_profile, scaling_curve, SATURATION_EPSILON};
use bwshare_core::sharing::{
    pairing_matrix, predict_sharing, predict_sharing_with_requested, relative_error,
    SharePrediction, WorkloadGroup,
};
use bwshare_core::sim::{
    run_sandwich, run_simulation, run_simulation_traced, Discipline, SandwichConfig, SimConfig,
    SimDuration, DEFAULT_LINE_SIZE, DEFAULT_WARMUP_FRACTION,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::catalog_file::effective_catalog;
use crate::csvio::{fmt_gbs, fmt_ratio, fmt_seconds, parse_measurements, parse_trace, CsvDoc};

#[derive(Debug, Parser)]
#[command(
    name = "bwshare",
    version,
    about = "Analytic memory-bandwidth sharing model, contention simulator, \
             and validation tools for loop kernels on multicore domains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict per-group bandwidth for a kernel mix (optionally sweeping
    /// thread counts).
    Predict(PredictArgs),
    /// Emit the pairwise bandwidth gain/loss matrix, normalized to the
    /// self-paired case.
    PairingMatrix(PairingMatrixArgs),
    /// Run the discrete-event contention oracle and compare it against the
    /// analytic prediction.
    Simulate(SimulateArgs),
    /// Compare observed bandwidths against the model and summarize the
    /// error distribution.
    Validate(ValidateArgs),
    /// Emit per-kernel multicore scaling curves.
    Scale(ScaleArgs),
    /// Duration-skewness analysis: predict and optionally simulate the
    /// sign, or analyze a recorded duration trace.
    Skew(SkewArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Extra catalog file merged over the built-in catalog (entries replace
    /// same-named ones); repeatable, later files win.
    #[arg(long = "catalog", value_name = "PATH")]
    pub catalog: Vec<PathBuf>,
    /// Output path, or "stdout" / "-" for standard output.
    #[arg(long, value_name = "PATH|stdout", default_value = "stdout")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    /// Two groups always filling the whole domain: (0, C), (1, C-1), ..., (C, 0).
    FullDomain,
    /// Two equal groups growing together: (1, 1), (2, 2), ..., (C/2, C/2).
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingMode {
    /// A group of n cores demands n·f·b_s: linear in n until the shared
    /// cap binds.
    RequestCap,
    /// Group demand follows the multicore scaling recursion, which inflates
    /// runtimes as the interface fills up.
    EcmRecursion,
}

impl ScalingMode {
    fn as_str(self) -> &'static str {
        match self {
            ScalingMode::RequestCap => "request-cap",
            ScalingMode::EcmRecursion => "ecm-recursion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DisciplineArg {
    /// First come, first served.
    Fcfs,
    /// Egalitarian processor sharing.
    Ps,
}

impl DisciplineArg {
    fn as_str(self) -> &'static str {
        match self {
            DisciplineArg::Fcfs => "fcfs",
            DisciplineArg::Ps => "ps",
        }
    }
}

impl From<DisciplineArg> for Discipline {
    fn from(value: DisciplineArg) -> Self {
        match value {
            DisciplineArg::Fcfs => Discipline::Fcfs,
            DisciplineArg::Ps => Discipline::ProcessorSharing,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Machine (contention domain) name.
    #[arg(short = 'm', long)]
    pub machine: String,
    /// Workload group "kernel[:count]"; repeatable. Counts are required
    /// unless --sweep enumerates them.
    #[arg(short = 'g', long = "group", required = true, value_name = "KERNEL[:COUNT]")]
    pub groups: Vec<String>,
    /// Sweep thread counts over two groups instead of fixing them.
    #[arg(long, value_enum)]
    pub sweep: Option<SweepMode>,
    /// How a group's bandwidth demand grows with its thread count.
    #[arg(long, value_enum, default_value_t = ScalingMode::RequestCap)]
    pub scaling_mode: ScalingMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PairingMatrixArgs {
    /// Machine (contention domain) name.
    #[arg(short = 'm', long)]
    pub machine: String,
    /// Kernel to include; repeatable. Defaults to every catalog kernel with
    /// data for the machine.
    #[arg(short = 'k', long = "kernel", value_name = "KERNEL")]
    pub kernels: Vec<String>,
    /// Thread split "n_self:n_other"; defaults to half the domain each.
    #[arg(long, value_name = "N1:N2")]
    pub split: Option<String>,
    /// How a group's bandwidth demand grows with its thread count.
    #[arg(long, value_enum, default_value_t = ScalingMode::RequestCap)]
    pub scaling_mode: ScalingMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Machine (contention domain) name.
    #[arg(short = 'm', long)]
    pub machine: String,
    /// Workload group "kernel:count"; repeatable, count required.
    #[arg(short = 'g', long = "group", required = true, value_name = "KERNEL:COUNT")]
    pub groups: Vec<String>,
    /// Service discipline of the memory interface.
    #[arg(long, value_enum, default_value_t = DisciplineArg::Fcfs)]
    pub discipline: DisciplineArg,
    /// Seed of the simulation's random streams.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Horizon as a total request budget.
    #[arg(long, conflicts_with = "seconds")]
    pub requests: Option<u64>,
    /// Horizon in simulated seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Relative amplitude of uniform inter-arrival jitter, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Fraction of the horizon discarded as warm-up, in [0, 1).
    #[arg(long, default_value_t = DEFAULT_WARMUP_FRACTION)]
    pub warmup: f64,
    /// Memory line size in bytes.
    #[arg(long, default_value_t = DEFAULT_LINE_SIZE)]
    pub line_size: u32,
    /// Also write the full event trace (arrival/service-start/completion)
    /// to this path.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Observed-bandwidth CSV with header
    /// machine,kernel1,n1,kernel2,n2,observed1_gbs,observed2_gbs.
    #[arg(long, value_name = "PATH")]
    pub measurements: PathBuf,
    /// How a group's bandwidth demand grows with its thread count.
    #[arg(long, value_enum, default_value_t = ScalingMode::RequestCap)]
    pub scaling_mode: ScalingMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Machine (contention domain) name.
    #[arg(short = 'm', long)]
    pub machine: String,
    /// Kernel to include; repeatable. Defaults to every catalog kernel with
    /// data for the machine.
    #[arg(short = 'k', long = "kernel", value_name = "KERNEL")]
    pub kernels: Vec<String>,
    /// Largest core count of the curve; defaults to the machine's domain
    /// size.
    #[arg(long, value_name = "N")]
    pub max_cores: Option<u32>,
    /// Scaling law of the curve.
    #[arg(long, value_enum, default_value_t = ScalingMode::EcmRecursion)]
    pub scaling_mode: ScalingMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SkewArgs {
    /// Duration-trace CSV (rank,start_s,end_s) to analyze instead of a
    /// kernel scenario.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with_all = ["machine", "subject", "successor", "predecessor",
                              "simulate", "span", "lines", "seed"]
    )]
    pub trace: Option<PathBuf>,
    /// Machine (contention domain) name.
    #[arg(short = 'm', long)]
    pub machine: Option<String>,
    /// Subject kernel whose per-core durations are analyzed.
    #[arg(long, value_name = "KERNEL")]
    pub subject: Option<String>,
    /// Kernel the early finishers run, or "idle".
    #[arg(long, value_name = "KERNEL|idle", default_value = "idle")]
    pub successor: String,
    /// Kernel run before the scheduled subject starts: a kernel name,
    /// "idle", or "subject" for the subject kernel itself.
    #[arg(long, value_name = "KERNEL|idle|subject", default_value = "subject")]
    pub predecessor: String,
    /// Also run the staggered-start experiment and report the measured
    /// skewness next to the predicted sign.
    #[arg(long)]
    pub simulate: bool,
    /// Stagger span of the scheduled starts, as a fraction of the
    /// uncontended subject duration.
    #[arg(long, default_value_t = 0.5)]
    pub span: f64,
    /// Subject lines each core must complete.
    #[arg(long, default_value_t = 2000)]
    pub lines: u64,
    /// Seed of the staggered-start experiment.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// |g1| at or below this counts as "no systematic skew" when judging
/// whether a simulated sign agrees with the predicted one.
const SIM_SKEW_THRESHOLD: f64 = 0.03;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Predict(args) => cmd_predict(&args),
        Command::PairingMatrix(args) => cmd_pairing_matrix(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Scale(args) => cmd_scale(&args),
        Command::Skew(args) => cmd_skew(&args),
    }
}

fn write_output(out: &str, text: &str) -> Result<()> {
    if out == "stdout" || out == "-" {
        print!("{text}");
        Ok(())
    } else {
        std::fs::write(out, text).with_context(|| format!("writing {out}"))
    }
}

/// A "kernel[:count]" group spec. The count is the part after the last ':'
/// when it parses as a number, so kernel names containing ':' stay intact.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub kernel: String,
    pub count: Option<u32>,
}

pub fn parse_group_spec(spec: &str) -> Result<GroupSpec> {
    if let Some((name, count)) = spec.rsplit_once(':') {
        if let Ok(count) = count.parse::<u32>() {
            if name.is_empty() {
                bail!("group spec '{spec}' has an empty kernel name");
            }
            return Ok(GroupSpec {
                kernel: name.to_string(),
                count: Some(count),
            });
        }
    }
    if spec.is_empty() {
        bail!("empty group spec");
    }
    Ok(GroupSpec {
        kernel: spec.to_string(),
        count: None,
    })
}

fn lookup_machine<'a>(catalog: &'a Catalog, name: &str) -> Result<&'a MachineDescription> {
    catalog.machine(name).map_err(|_| {
        let available: Vec<&str> = catalog.machines.iter().map(|m| m.name.as_str()).collect();
        anyhow::anyhow!(
            "unknown machine '{name}'; available machines: {}",
            available.join(", ")
        )
    })
}

fn lookup_kernel<'a>(catalog: &'a Catalog, name: &str) -> Result<&'a KernelDescription> {
    catalog.kernel(name).map_err(|_| {
        anyhow::anyhow!(
            "unknown kernel '{name}'; available kernels: {}",
            catalog.kernel_names().join(", ")
        )
    })
}

/// Per-group demand in bytes/second under the selected scaling mode.
fn group_demands(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
    mode: ScalingMode,
) -> Result<Vec<f64>> {
    let mut demands = Vec::with_capacity(groups.len());
    for g in groups {
        let point = g.kernel.point(&machine.name).with_context(|| {
            format!(
                "kernel '{}' has no data for machine '{}'",
                g.kernel.name, machine.name
            )
        })?;
        let demand = if g.n_threads == 0 {
            0.0
        } else {
            match mode {
                ScalingMode::RequestCap => {
                    g.n_threads as f64 * point.request_fraction * point.saturated_bandwidth
                }
                ScalingMode::EcmRecursion => {
                    let profile = degenerate_profile(point.request_fraction)?;
                    let curve = scaling_curve(
                        &profile,
                        machine.overlap_policy,
                        g.n_threads,
                        point.saturated_bandwidth,
                    )?;
                    curve.aggregate_bandwidth(g.n_threads)
                }
            }
        };
        demands.push(demand);
    }
    Ok(demands)
}

fn predict_with_mode(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
    mode: ScalingMode,
) -> Result<SharePrediction> {
    match mode {
        ScalingMode::RequestCap => Ok(predict_sharing(groups, machine)?),
        ScalingMode::EcmRecursion => {
            let demands = group_demands(groups, machine, mode)?;
            Ok(predict_sharing_with_requested(groups, machine, &demands)?)
        }
    }
}

// ---------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let catalog = effective_catalog(&args.common.catalog)?;
    let machine = lookup_machine(&catalog, &args.machine)?;
    let specs: Vec<GroupSpec> = args
        .groups
        .iter()
        .map(|s| parse_group_spec(s))
        .collect::<Result<_>>()?;
    let kernels: Vec<&KernelDescription> = specs
        .iter()
        .map(|s| lookup_kernel(&catalog, &s.kernel))
        .collect::<Result<_>>()?;

    // Each row is one (n_1, ..., n_k) assignment.
    let assignments: Vec<Vec<u32>> = match args.sweep {
        None => {
            let counts = specs
                .iter()
                .map(|s| {
                    s.count.with_context(|| {
                        format!(
                            "group '{}' needs an explicit count (\"{}:N\") \
                             unless --sweep enumerates the counts",
                            s.kernel, s.kernel
                        )
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            vec![counts]
        }
        Some(mode) => {
            if specs.len() != 2 {
                bail!(
                    "--sweep needs exactly two groups, got {}",
                    specs.len()
                );
            }
            if let Some(spec) = specs.iter().find(|s| s.count.is_some()) {
                bail!(
                    "--sweep enumerates thread counts; drop the count from \
                     group '{}:{}'",
                    spec.kernel,
                    spec.count.unwrap()
                );
            }
            let cores = machine.cores_per_domain;
            match mode {
                SweepMode::FullDomain => {
                    (0..=cores).map(|n1| vec![n1, cores - n1]).collect()
                }
                SweepMode::Symmetric => {
                    (1..=cores / 2).map(|n| vec![n, n]).collect()
                }
            }
        }
    };

    let k = kernels.len();
    let mut doc = CsvDoc::new();
    doc.comment("units: bandwidth GB/s");
    doc.comment(&format!(
        "machine: {} ({} cores per domain)",
        machine.name, machine.cores_per_domain
    ));
    doc.comment(&format!("scaling-mode: {}", args.scaling_mode.as_str()));
    if let Some(mode) = args.sweep {
        let name = match mode {
            SweepMode::FullDomain => "full-domain",
            SweepMode::Symmetric => "symmetric",
        };
        doc.comment(&format!("sweep: {name}"));
    }
    let mut columns: Vec<String> = vec!["machine".to_string()];
    for i in 1..=k {
        columns.push(format!("kernel{i}"));
        columns.push(format!("n{i}"));
    }
    columns.push("b_mixed_gbs".to_string());
    for i in 1..=k {
        columns.push(format!("alpha{i}"));
    }
    for i in 1..=k {
        columns.push(format!("group_bw{i}_gbs"));
    }
    for i in 1..=k {
        columns.push(format!("per_core_bw{i}_gbs"));
    }
    columns.push("saturated".to_string());
    doc.header(&columns.iter().map(|c| c.as_str()).collect::<Vec<_>>());

    for counts in &assignments {
        let groups: Vec<WorkloadGroup<'_>> = kernels
            .iter()
            .zip(counts)
            .map(|(kernel, &n)| WorkloadGroup::new(kernel, n))
            .collect();
        let p = predict_with_mode(&groups, machine, args.scaling_mode)?;
        let mut row: Vec<String> = vec![machine.name.clone()];
        for (kernel, &n) in kernels.iter().zip(counts) {
            row.push(kernel.name.clone());
            row.push(n.to_string());
        }
        row.push(fmt_gbs(p.mixed_saturated_bandwidth));
        for alpha in &p.share_factors {
            row.push(fmt_ratio(*alpha));
        }
        for bw in &p.group_bandwidth {
            row.push(fmt_gbs(*bw));
        }
        for bw in &p.per_core_bandwidth {
            row.push(fmt_gbs(*bw));
        }
        row.push(p.saturated.to_string());
        doc.row(&row);
    }
    write_output(&args.common.out, &doc.finish())
}

// ---------------------------------------------------------------------
// pairing-matrix
// ---------------------------------------------------------------------

fn parse_split(spec: &str) -> Result<(u32, u32)> {
    let parsed = spec.split_once(':').and_then(|(a, b)| {
        Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?))
    });
    parsed.with_context(|| format!("--split must be \"N1:N2\", got '{spec}'"))
}

fn cmd_pairing_matrix(args: &PairingMatrixArgs) -> Result<()> {
    let catalog = effective_catalog(&args.common.catalog)?;
    let machine = lookup_machine(&catalog, &args.machine)?;
    let kernels: Vec<&KernelDescription> = if args.kernels.is_empty() {
        catalog
            .kernels
            .iter()
            .filter(|k| k.point(&machine.name).is_some())
            .collect()
    } else {
        args.kernels
            .iter()
            .map(|name| lookup_kernel(&catalog, name))
            .collect::<Result<_>>()?
    };
    if kernels.is_empty() {
        bail!("no kernels with data for machine '{}'", machine.name);
    }
    let split = match &args.split {
        Some(spec) => parse_split(spec)?,
        None => {
            let half = machine.cores_per_domain / 2;
            (half, machine.cores_per_domain - half)
        }
    };
    if args.scaling_mode != ScalingMode::RequestCap {
        // The matrix is a ratio of two saturated mixes; the demand model
        // only matters below saturation, where both mixes would be
        // demand-limited and the ratio collapses to 1.
        bail!("pairing-matrix supports only --scaling-mode request-cap");
    }
    let entries = pairing_matrix(&kernels, machine, split)?;

    let mut doc = CsvDoc::new();
    doc.comment("value: bandwidth of self_kernel's group paired with other_kernel,");
    doc.comment("normalized to the self-paired case at the same thread split");
    doc.comment(&format!(
        "machine: {} ({} cores per domain)",
        machine.name, machine.cores_per_domain
    ));
    doc.comment(&format!("split: {}+{} threads", split.0, split.1));
    doc.header(&[
        "machine",
        "self_kernel",
        "other_kernel",
        "n_self",
        "n_other",
        "value",
    ]);
    for entry in &entries {
        doc.row(&[
            machine.name.clone(),
            entry.self_kernel.clone(),
            entry.other_kernel.clone(),
            split.0.to_string(),
            split.1.to_string(),
            fmt_ratio(entry.value),
        ]);
    }
    write_output(&args.common.out, &doc.finish())
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let catalog = effective_catalog(&args.common.catalog)?;
    let machine = lookup_machine(&catalog, &args.machine)?;
    let specs: Vec<GroupSpec> = args
        .groups
        .iter()
        .map(|s| parse_group_spec(s))
        .collect::<Result<_>>()?;
    let mut groups = Vec::with_capacity(specs.len());
    for spec in &specs {
        let kernel = lookup_kernel(&catalog, &spec.kernel)?;
        let count = spec.count.with_context(|| {
            format!("simulated group '{}' needs a thread count", spec.kernel)
        })?;
        if count == 0 {
            bail!("simulated group '{}' needs at least one thread", spec.kernel);
        }
        groups.push(WorkloadGroup::new(kernel, count));
    }

    let duration = match (args.requests, args.seconds) {
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        (Some(requests), None) => SimDuration::Requests(requests),
        (None, Some(seconds)) => SimDuration::Seconds(seconds),
        (None, None) => SimDuration::Requests(100_000),
    };
    let config = SimConfig {
        groups: &groups,
        machine,
        duration,
        line_size_bytes: args.line_size,
        seed: args.seed,
        discipline: args.discipline.into(),
        warmup_fraction: args.warmup,
        jitter: args.jitter,
    };
    let (result, trace) = if args.trace.is_some() {
        let (result, events) = run_simulation_traced(&config)?;
        (result, Some(events))
    } else {
        (run_simulation(&config)?, None)
    };
    let analytic = predict_sharing(&groups, machine)?;

    let mut doc = CsvDoc::new();
    doc.comment("units: bandwidth GB/s, time seconds");
    doc.comment(&format!(
        "machine: {} ({} cores per domain)",
        machine.name, machine.cores_per_domain
    ));
    let duration_text = match duration {
        SimDuration::Requests(n) => format!("{n} requests"),
        SimDuration::Seconds(s) => format!("{} s", fmt_seconds(s)),
    };
    doc.comment(&format!(
        "horizon: {duration_text}; line-size: {} B; warmup: {}; jitter: {}",
        args.line_size, args.warmup, args.jitter
    ));
    doc.comment(&format!(
        "interface-utilization: {}",
        fmt_ratio(result.interface_utilization)
    ));
    doc.comment(&format!(
        "horizon-s: {}",
        fmt_seconds(result.horizon_seconds)
    ));
    doc.header(&[
        "machine",
        "discipline",
        "seed",
        "group",
        "kernel",
        "n_threads",
        "analytic_group_gbs",
        "simulated_group_gbs",
        "relative_error",
        "analytic_per_core_gbs",
        "simulated_per_core_gbs",
        "queue_depth_mean",
        "queue_depth_max",
    ]);
    for (i, group) in groups.iter().enumerate() {
        let error = relative_error(
            result.per_group_bandwidth[i],
            analytic.group_bandwidth[i],
        )?;
        doc.row(&[
            machine.name.clone(),
            args.discipline.as_str().to_string(),
            args.seed.to_string(),
            (i + 1).to_string(),
            group.kernel.name.clone(),
            group.n_threads.to_string(),
            fmt_gbs(analytic.group_bandwidth[i]),
            fmt_gbs(result.per_group_bandwidth[i]),
            fmt_ratio(error),
            fmt_gbs(analytic.per_core_bandwidth[i]),
            fmt_gbs(result.per_core_bandwidth[i]),
            fmt_ratio(result.queue_depth_stats[i].mean),
            result.queue_depth_stats[i].max.to_string(),
        ]);
    }
    write_output(&args.common.out, &doc.finish())?;

    if let (Some(path), Some(events)) = (&args.trace, trace) {
        let mut doc = CsvDoc::new();
        doc.comment("event trace; units: time seconds");
        doc.header(&["time_s", "core", "group", "kind"]);
        for event in &events {
            doc.row(&[
                fmt_seconds(event.time_s),
                event.core.to_string(),
                event.group.to_string(),
                event.kind.as_str().to_string(),
            ]);
        }
        std::fs::write(path, doc.finish())
            .with_context(|| format!("writing trace {}", path.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let catalog = effective_catalog(&args.common.catalog)?;
    let text = std::fs::read_to_string(&args.measurements)
        .with_context(|| format!("reading {}", args.measurements.display()))?;
    let records = parse_measurements(&text)
        .with_context(|| format!("in {}", args.measurements.display()))?;
    if records.is_empty() {
        bail!(
            "no measurement records in {}",
            args.measurements.display()
        );
    }

    let mut doc = CsvDoc::new();
    doc.comment("units: bandwidth GB/s");
    doc.comment(&format!("scaling-mode: {}", args.scaling_mode.as_str()));
    doc.comment("summary rows (record = min/q1/median/q3/max) hold the");
    doc.comment("relative-error distribution over all data rows");
    doc.header(&[
        "record",
        "machine",
        "kernel1",
        "n1",
        "kernel2",
        "n2",
        "group",
        "observed_gbs",
        "modeled_gbs",
        "relative_error",
    ]);

    let mut errors = Vec::with_capacity(records.len() * 2);
    for (index, record) in records.iter().enumerate() {
        let context = || format!("measurement record {}", index + 1);
        let machine = lookup_machine(&catalog, &record.machine).with_context(context)?;
        let k1 = lookup_kernel(&catalog, &record.kernel1).with_context(context)?;
        let k2 = lookup_kernel(&catalog, &record.kernel2).with_context(context)?;
        let groups = [
            WorkloadGroup::new(k1, record.n1),
            WorkloadGroup::new(k2, record.n2),
        ];
        let p = predict_with_mode(&groups, machine, args.scaling_mode).with_context(context)?;
        let observed = [record.observed1_gbs * 1e9, record.observed2_gbs * 1e9];
        for group in 0..2 {
            let error = relative_error(observed[group], p.group_bandwidth[group])
                .with_context(context)?;
            errors.push(error);
            doc.row(&[
                (index + 1).to_string(),
                record.machine.clone(),
                record.kernel1.clone(),
                record.n1.to_string(),
                record.kernel2.clone(),
                record.n2.to_string(),
                (group + 1).to_string(),
                fmt_gbs(observed[group]),
                fmt_gbs(p.group_bandwidth[group]),
                fmt_ratio(error),
            ]);
        }
    }

    errors.sort_by(f64::total_cmp);
    let summary = [
        ("min", 0.0),
        ("q1", 0.25),
        ("median", 0.5),
        ("q3", 0.75),
        ("max", 1.0),
    ];
    for (name, p) in summary {
        let mut row = vec![name.to_string()];
        row.extend(std::iter::repeat(String::new()).take(8));
        row.push(fmt_ratio(quantile(&errors, p)));
        doc.row(&row);
    }
    write_output(&args.common.out, &doc.finish())
}

// ---------------------------------------------------------------------
// scale
// ---------------------------------------------------------------------

fn cmd_scale(args: &ScaleArgs) -> Result<()> {
    let catalog = effective_catalog(&args.common.catalog)?;
    let machine = lookup_machine(&catalog, &args.machine)?;
    let kernels: Vec<&KernelDescription> = if args.kernels.is_empty() {
        catalog
            .kernels
            .iter()
            .filter(|k| k.point(&machine.name).is_some())
            .collect()
    } else {
        args.kernels
            .iter()
            .map(|name| lookup_kernel(&catalog, name))
            .collect::<Result<_>>()?
    };
    if kernels.is_empty() {
        bail!("no kernels with data for machine '{}'", machine.name);
    }
    let n_max = args.max_cores.unwrap_or(machine.cores_per_domain);
    if n_max == 0 {
        bail!("--max-cores must be at least 1");
    }

    let mut doc = CsvDoc::new();
    doc.comment("units: bandwidth GB/s");
    doc.comment(&format!(
        "machine: {} ({} cores per domain)",
        machine.name, machine.cores_per_domain
    ));
    doc.comment("saturation_point: smallest n with utilization >= 0.99 (empty if unreached)");
    doc.header(&[
        "machine",
        "kernel",
        "mode",
        "n",
        "utilization",
        "per_core_gbs",
        "aggregate_gbs",
        "saturation_point",
    ]);

    for kernel in &kernels {
        let point = kernel.point(&machine.name).with_context(|| {
            format!(
                "kernel '{}' has no data for machine '{}'",
                kernel.name, machine.name
            )
        })?;
        let f = point.request_fraction;
        let b_s = point.saturated_bandwidth;
        let (utilization, per_core, saturation): (Vec<f64>, Vec<f64>, Option<u32>) =
            match args.scaling_mode {
                ScalingMode::RequestCap => {
                    let utilization: Vec<f64> =
                        (1..=n_max).map(|n| (n as f64 * f).min(1.0)).collect();
                    let per_core: Vec<f64> = (1..=n_max)
                        .map(|n| (n as f64 * f * b_s).min(b_s) / n as f64)
                        .collect();
                    let saturation = utilization
                        .iter()
                        .position(|&u| u >= 1.0 - SATURATION_EPSILON)
                        .map(|i| i as u32 + 1);
                    (utilization, per_core, saturation)
                }
                ScalingMode::EcmRecursion => {
                    let profile = degenerate_profile(f)?;
                    let curve = scaling_curve(&profile, machine.overlap_policy, n_max, b_s)?;
                    (
                        curve.utilization.clone(),
                        curve.per_core_bandwidth.clone(),
                        curve.saturation_point,
                    )
                }
            };
        let saturation_text = saturation.map_or(String::new(), |n| n.to_string());
        for n in 1..=n_max {
            let i = (n - 1) as usize;
            doc.row(&[
                machine.name.clone(),
                kernel.name.clone(),
                args.scaling_mode.as_str().to_string(),
                n.to_string(),
                fmt_ratio(utilization[i]),
                fmt_gbs(per_core[i]),
                fmt_gbs(per_core[i] * n as f64),
                saturation_text.clone(),
            ]);
        }
    }
    write_output(&args.common.out, &doc.finish())
}

// ---------------------------------------------------------------------
// skew
// ---------------------------------------------------------------------

fn cmd_skew(args: &SkewArgs) -> Result<()> {
    if let Some(path) = &args.trace {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let samples =
            parse_trace(&text).with_context(|| format!("in {}", path.display()))?;
        let report = duration_skewness(&samples)?;
        let mut doc = CsvDoc::new();
        doc.comment("duration skewness of a recorded trace; units: time seconds");
        doc.header(&[
            "source",
            "samples",
            "standardized_skewness",
            "same_units_skewness_s",
        ]);
        doc.row(&[
            path.display().to_string(),
            samples.len().to_string(),
            fmt_ratio(report.standardized),
            fmt_seconds(report.same_units),
        ]);
        return write_output(&args.common.out, &doc.finish());
    }

    let (Some(machine_name), Some(subject_name)) = (&args.machine, &args.subject) else {
        bail!("skew needs either --trace PATH, or a scenario via -m MACHINE --subject KERNEL");
    };
    let catalog = effective_catalog(&args.common.catalog)?;
    let machine = lookup_machine(&catalog, machine_name)?;
    let subject = lookup_kernel(&catalog, subject_name)?;
    let successor = match args.successor.as_str() {
        "idle" => None,
        name => Some(lookup_kernel(&catalog, name)?),
    };
    let predecessor = match args.predecessor.as_str() {
        "idle" => None,
        "subject" => Some(subject),
        name => Some(lookup_kernel(&catalog, name)?),
    };
    let scenario = SandwichScenario {
        predecessor,
        subject,
        successor,
        machine,
    };
    let predicted = predict_skew_sign(&scenario)?;
    let f_subject = subject
        .point(&machine.name)
        .map(|p| p.request_fraction)
        .unwrap_or_default();
    let f_successor = successor.and_then(|k| k.point(&machine.name));

    let (sim_g1, sim_units, agreement) = if args.simulate {
        let config = SandwichConfig {
            lines_per_core: args.lines,
            span_fraction: args.span,
            seed: args.seed,
            ..SandwichConfig::default()
        };
        let samples = run_sandwich(&scenario, &config)?;
        let report = duration_skewness(&samples)?;
        let sim_sign = if report.standardized > SIM_SKEW_THRESHOLD {
            1
        } else if report.standardized < -SIM_SKEW_THRESHOLD {
            -1
        } else {
            0
        };
        (
            fmt_ratio(report.standardized),
            fmt_seconds(report.same_units),
            (sim_sign == predicted.signum()).to_string(),
        )
    } else {
        (String::new(), String::new(), String::new())
    };

    let mut doc = CsvDoc::new();
    doc.comment("predicted_sign: desync = positive skew, resync = negative");
    if args.simulate {
        doc.comment(&format!(
            "staggered-start run: span {}, {} lines per core, seed {}",
            args.span, args.lines, args.seed
        ));
        doc.comment(&format!(
            "sign_agreement treats |g1| <= {SIM_SKEW_THRESHOLD} as neutral"
        ));
    }
    doc.header(&[
        "machine",
        "predecessor",
        "subject",
        "successor",
        "f_subject",
        "f_successor",
        "predicted_sign",
        "simulated_g1",
        "simulated_same_units_s",
        "sign_agreement",
    ]);
    let phase_name = |kernel: Option<&KernelDescription>| {
        kernel.map_or("idle".to_string(), |k| k.name.clone())
    };
    doc.row(&[
        machine.name.clone(),
        phase_name(predecessor),
        subject.name.clone(),
        phase_name(successor),
        fmt_ratio(f_subject),
        f_successor.map_or(String::new(), |p| fmt_ratio(p.request_fraction)),
        predicted.as_str().to_string(),
        sim_g1,
        sim_units,
        agreement,
    ]);
    write_output(&args.common.out, &doc.finish())
}
