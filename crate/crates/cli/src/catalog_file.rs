//! Catalog files: a TOML schema for machines and kernels with mandatory
//! unit suffixes on every dimensioned quantity.
//!
//! One file may declare machines, kernels, or both.  Values are converted
//! to SI (bytes, Hz, bytes/second) at load time; the in-memory catalog
//! never carries units.  See `catalog.example.toml` in the repository root
//! for a complete annotated example.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bwshare_core::catalog::{
    BottleneckLevel, CacheLevelSpec, CacheOrganization, CacheScope, Catalog, DataPathBandwidth,
    KernelClass, KernelDescription, LayerCondition, MachineDescription, MachinePoint,
    OverlapPolicy, StencilSpec,
};
use serde::Deserialize;

use crate::units::{parse_bandwidth, parse_clock, parse_data_path, parse_element_size, parse_size};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    #[serde(default)]
    machines: Vec<RawMachine>,
    #[serde(default)]
    kernels: Vec<RawKernel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMachine {
    name: String,
    cores_per_domain: u32,
    /// e.g. "2.2 GHz"
    base_clock: String,
    /// "non-overlapping" | "overlapping"
    overlap_policy: String,
    /// e.g. "68.3 GB/s"
    theoretical_mem_bandwidth: String,
    #[serde(default)]
    cache_levels: Vec<RawCacheLevel>,
    /// One rating per adjacent level pair, e.g. ["64 B/cy", "32+32 B/cy"].
    #[serde(default)]
    data_paths: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCacheLevel {
    name: String,
    /// e.g. "32 KiB"
    size: String,
    /// "private" | "shared"
    scope: String,
    /// "inclusive" | "exclusive" | "victim"
    organization: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    name: String,
    #[serde(default)]
    pseudo_code: String,
    /// "read-only" | "read-write"; derived from the stream counts if omitted.
    class: Option<String>,
    read_streams: u32,
    write_streams: u32,
    rfo_streams: u32,
    /// Defaults to read + write + rfo streams.
    element_transfers: Option<u32>,
    /// "memory" | "l3"; defaults to "memory".
    bottleneck: Option<String>,
    /// e.g. "8 B"; defaults to 8-byte elements.
    element_size: Option<String>,
    flops_per_iteration: u32,
    /// Bytes per flop; omit when undefined (zero-flop kernels).
    code_balance: Option<f64>,
    stencil: Option<RawStencil>,
    /// Machine name -> measured operating point.
    #[serde(default)]
    points: BTreeMap<String, RawPoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStencil {
    /// "l2-fulfilled" | "l2-violated"
    layer_condition: String,
    active_streams_at_l3: u32,
    /// [outer, inner]
    grid_shape: [u32; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    request_fraction: f64,
    /// e.g. "56.5 GB/s"
    saturated_bandwidth: String,
}

fn convert_machine(raw: RawMachine) -> Result<MachineDescription> {
    let name = raw.name;
    let ctx = |field: &str| format!("machine {name:?}: {field}");
    let overlap_policy = match raw.overlap_policy.as_str() {
        "non-overlapping" => OverlapPolicy::NonOverlapping,
        "overlapping" => OverlapPolicy::Overlapping,
        other => bail!(
            "machine {name:?}: overlap_policy must be \"non-overlapping\" or \
             \"overlapping\", got {other:?}"
        ),
    };
    let mut cache_levels = Vec::with_capacity(raw.cache_levels.len());
    for level in raw.cache_levels {
        let scope = match level.scope.as_str() {
            "private" => CacheScope::Private,
            "shared" => CacheScope::Shared,
            other => bail!(
                "machine {name:?}: cache level {:?}: scope must be \"private\" or \
                 \"shared\", got {other:?}",
                level.name
            ),
        };
        let organization = match level.organization.as_deref() {
            None => None,
            Some("inclusive") => Some(CacheOrganization::Inclusive),
            Some("exclusive") => Some(CacheOrganization::Exclusive),
            Some("victim") => Some(CacheOrganization::Victim),
            Some(other) => bail!(
                "machine {name:?}: cache level {:?}: organization must be \"inclusive\", \
                 \"exclusive\", or \"victim\", got {other:?}",
                level.name
            ),
        };
        let size_bytes = parse_size(&level.size)
            .with_context(|| format!("machine {name:?}: cache level {:?}: size", level.name))?;
        cache_levels.push(CacheLevelSpec {
            name: level.name,
            size_bytes,
            scope,
            organization,
        });
    }
    let mut data_path_bandwidths = Vec::with_capacity(raw.data_paths.len());
    for (i, path) in raw.data_paths.iter().enumerate() {
        data_path_bandwidths
            .push(parse_data_path(path).with_context(|| ctx(&format!("data_paths[{i}]")))?);
    }
    Ok(MachineDescription {
        cores_per_domain: raw.cores_per_domain,
        base_clock_hz: parse_clock(&raw.base_clock).with_context(|| ctx("base_clock"))?,
        cache_levels,
        data_path_bandwidths,
        overlap_policy,
        theoretical_mem_bandwidth: parse_bandwidth(&raw.theoretical_mem_bandwidth)
            .with_context(|| ctx("theoretical_mem_bandwidth"))?,
        name,
    })
}

fn convert_kernel(raw: RawKernel) -> Result<KernelDescription> {
    let name = raw.name;
    let derived_class = if raw.write_streams == 0 && raw.rfo_streams == 0 {
        KernelClass::ReadOnly
    } else {
        KernelClass::ReadWrite
    };
    let kernel_class = match raw.class.as_deref() {
        None => derived_class,
        Some("read-only") => KernelClass::ReadOnly,
        Some("read-write") => KernelClass::ReadWrite,
        Some(other) => bail!(
            "kernel {name:?}: class must be \"read-only\" or \"read-write\", got {other:?}"
        ),
    };
    let bottleneck_level = match raw.bottleneck.as_deref() {
        None | Some("memory") => BottleneckLevel::Memory,
        Some("l3") => BottleneckLevel::L3,
        Some(other) => {
            bail!("kernel {name:?}: bottleneck must be \"memory\" or \"l3\", got {other:?}")
        }
    };
    let element_size_bytes = match raw.element_size.as_deref() {
        None => 8,
        Some(text) => {
            parse_element_size(text).with_context(|| format!("kernel {name:?}: element_size"))?
        }
    };
    let stencil = match raw.stencil {
        None => None,
        Some(s) => {
            let layer_condition = match s.layer_condition.as_str() {
                "l2-fulfilled" => LayerCondition::L2Fulfilled,
                "l2-violated" => LayerCondition::L2Violated,
                other => bail!(
                    "kernel {name:?}: stencil.layer_condition must be \"l2-fulfilled\" or \
                     \"l2-violated\", got {other:?}"
                ),
            };
            Some(StencilSpec {
                layer_condition,
                active_streams_at_l3: s.active_streams_at_l3,
                grid_shape: (s.grid_shape[0], s.grid_shape[1]),
            })
        }
    };
    let mut per_machine = BTreeMap::new();
    for (machine, point) in raw.points {
        let saturated_bandwidth = parse_bandwidth(&point.saturated_bandwidth).with_context(
            || format!("kernel {name:?}: points.{machine:?}.saturated_bandwidth"),
        )?;
        per_machine.insert(
            machine,
            MachinePoint {
                request_fraction: point.request_fraction,
                saturated_bandwidth,
            },
        );
    }
    Ok(KernelDescription {
        element_transfers: raw
            .element_transfers
            .unwrap_or(raw.read_streams + raw.write_streams + raw.rfo_streams),
        pseudo_code: raw.pseudo_code,
        read_streams: raw.read_streams,
        write_streams: raw.write_streams,
        rfo_streams: raw.rfo_streams,
        bottleneck_level,
        element_size_bytes,
        flops_per_iteration: raw.flops_per_iteration,
        code_balance_bytes_per_flop: raw.code_balance,
        kernel_class,
        stencil,
        per_machine,
        name,
    })
}

/// Parse a catalog document.  An empty document yields an empty catalog.
///
/// Syntax and unit errors are reported with the offending machine, kernel,
/// or field named; cross-references (a kernel's points naming a machine)
/// are not checked here because a file may legitimately extend machines it
/// does not itself declare.  [`effective_catalog`] validates the merged
/// result.
pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let raw: RawCatalog = toml::from_str(text).context("catalog parse error")?;
    let machines = raw
        .machines
        .into_iter()
        .map(convert_machine)
        .collect::<Result<Vec<_>>>()?;
    let kernels = raw
        .kernels
        .into_iter()
        .map(convert_kernel)
        .collect::<Result<Vec<_>>>()?;
    Ok(Catalog { machines, kernels })
}

/// Read and parse a catalog file.
pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading catalog file {}", path.display()))?;
    parse_catalog(&text).with_context(|| format!("in catalog file {}", path.display()))
}

/// The built-in catalog with each file merged over it in order (entries
/// replace same-named ones, otherwise append), validated as a whole.
pub fn effective_catalog<P: AsRef<Path>>(paths: &[P]) -> Result<Catalog> {
    let mut catalog = Catalog::builtin();
    for path in paths {
        catalog.merge(load_catalog(path.as_ref())?);
    }
    catalog
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid catalog: {e}"))?;
    Ok(catalog)
}

fn toml_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Format an `f64` so that parsing the result recovers the exact value.
fn toml_float(v: f64) -> String {
    let s = format!("{v}");
    // TOML floats need a fractional part or exponent to not read as integers.
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

/// Serialize a catalog to the same schema [`parse_catalog`] reads.
///
/// Dimensioned values are written in base SI units ("B", "Hz", "B/s") at
/// full precision, so a serialize/parse round trip reproduces the catalog
/// exactly.
pub fn serialize_catalog(catalog: &Catalog) -> String {
    let mut out = String::new();
    for m in &catalog.machines {
        let _ = writeln!(out, "[[machines]]");
        let _ = writeln!(out, "name = {}", toml_string(&m.name));
        let _ = writeln!(out, "cores_per_domain = {}", m.cores_per_domain);
        let _ = writeln!(out, "base_clock = \"{} Hz\"", toml_float(m.base_clock_hz));
        let policy = match m.overlap_policy {
            OverlapPolicy::NonOverlapping => "non-overlapping",
            OverlapPolicy::Overlapping => "overlapping",
        };
        let _ = writeln!(out, "overlap_policy = \"{policy}\"");
        let _ = writeln!(
            out,
            "theoretical_mem_bandwidth = \"{} B/s\"",
            toml_float(m.theoretical_mem_bandwidth)
        );
        let paths: Vec<String> = m
            .data_path_bandwidths
            .iter()
            .map(|p| match *p {
                DataPathBandwidth::Combined(b) => format!("\"{} B/cy\"", toml_float(b)),
                DataPathBandwidth::PerDirection { load, store } => {
                    format!("\"{}+{} B/cy\"", toml_float(load), toml_float(store))
                }
            })
            .collect();
        let _ = writeln!(out, "data_paths = [{}]", paths.join(", "));
        for level in &m.cache_levels {
            let _ = writeln!(out, "\n[[machines.cache_levels]]");
            let _ = writeln!(out, "name = {}", toml_string(&level.name));
            let _ = writeln!(out, "size = \"{} B\"", level.size_bytes);
            let scope = match level.scope {
                CacheScope::Private => "private",
                CacheScope::Shared => "shared",
            };
            let _ = writeln!(out, "scope = \"{scope}\"");
            if let Some(org) = level.organization {
                let org = match org {
                    CacheOrganization::Inclusive => "inclusive",
                    CacheOrganization::Exclusive => "exclusive",
                    CacheOrganization::Victim => "victim",
                };
                let _ = writeln!(out, "organization = \"{org}\"");
            }
        }
        let _ = writeln!(out);
    }
    for k in &catalog.kernels {
        let _ = writeln!(out, "[[kernels]]");
        let _ = writeln!(out, "name = {}", toml_string(&k.name));
        let _ = writeln!(out, "pseudo_code = {}", toml_string(&k.pseudo_code));
        let class = match k.kernel_class {
            KernelClass::ReadOnly => "read-only",
            KernelClass::ReadWrite => "read-write",
        };
        let _ = writeln!(out, "class = \"{class}\"");
        let _ = writeln!(out, "read_streams = {}", k.read_streams);
        let _ = writeln!(out, "write_streams = {}", k.write_streams);
        let _ = writeln!(out, "rfo_streams = {}", k.rfo_streams);
        let _ = writeln!(out, "element_transfers = {}", k.element_transfers);
        let bottleneck = match k.bottleneck_level {
            BottleneckLevel::Memory => "memory",
            BottleneckLevel::L3 => "l3",
        };
        let _ = writeln!(out, "bottleneck = \"{bottleneck}\"");
        let _ = writeln!(out, "element_size = \"{} B\"", k.element_size_bytes);
        let _ = writeln!(out, "flops_per_iteration = {}", k.flops_per_iteration);
        if let Some(balance) = k.code_balance_bytes_per_flop {
            let _ = writeln!(out, "code_balance = {}", toml_float(balance));
        }
        if let Some(s) = &k.stencil {
            let lc = match s.layer_condition {
                LayerCondition::L2Fulfilled => "l2-fulfilled",
                LayerCondition::L2Violated => "l2-violated",
            };
            let _ = writeln!(out, "\n[kernels.stencil]");
            let _ = writeln!(out, "layer_condition = \"{lc}\"");
            let _ = writeln!(out, "active_streams_at_l3 = {}", s.active_streams_at_l3);
            let _ = writeln!(
                out,
                "grid_shape = [{}, {}]",
                s.grid_shape.0, s.grid_shape.1
            );
        }
        for (machine, point) in &k.per_machine {
            let _ = writeln!(out, "\n[kernels.points.{}]", toml_string(machine));
            let _ = writeln!(
                out,
                "request_fraction = {}",
                toml_float(point.request_fraction)
            );
            let _ = writeln!(
                out,
                "saturated_bandwidth = \"{} B/s\"",
                toml_float(point.saturated_bandwidth)
            );
        }
        let _ = writeln!(out);
    }
    out
}
