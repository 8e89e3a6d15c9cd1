//! Parsers for the human-readable unit strings used in catalog files:
//! bandwidths ("68.3 GB/s"), cache sizes ("32 KiB"), clocks ("2.2 GHz"),
//! per-cycle data-path ratings ("64 B/cy", "32+32 B/cy"), and element
//! sizes ("8 B").

use anyhow::{anyhow, bail, Context, Result};
use bwshare_core::catalog::DataPathBandwidth;

fn split_value_unit(input: &str) -> Result<(f64, &str)> {
    let trimmed = input.trim();
    let split_at = trimmed
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| anyhow!("missing unit in '{trimmed}'"))?;
    let (value, unit) = trimmed.split_at(split_at);
    let value: f64 = value
        .trim()
        .parse()
        .with_context(|| format!("invalid number in '{trimmed}'"))?;
    Ok((value, unit.trim()))
}

/// Parse a bandwidth such as "68.3 GB/s" into bytes/second. Decimal
/// prefixes: GB/s = 10^9 bytes/s.
pub fn parse_bandwidth(input: &str) -> Result<f64> {
    let (value, unit) = split_value_unit(input)?;
    let scale = match unit {
        "B/s" => 1.0,
        "kB/s" | "KB/s" => 1e3,
        "MB/s" => 1e6,
        "GB/s" => 1e9,
        "TB/s" => 1e12,
        other => bail!("unknown bandwidth unit '{other}' in '{input}' (use e.g. GB/s)"),
    };
    if !(value >= 0.0) || !value.is_finite() {
        bail!("bandwidth must be non-negative and finite, got '{input}'");
    }
    Ok(value * scale)
}

/// Parse a memory size such as "32 KiB" into bytes. Binary prefixes:
/// KiB = 1024 B.
pub fn parse_size(input: &str) -> Result<u64> {
    let (value, unit) = split_value_unit(input)?;
    let scale: u64 = match unit {
        "B" => 1,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        other => bail!("unknown size unit '{other}' in '{input}' (use B, KiB, MiB, or GiB)"),
    };
    if !(value >= 0.0) || !value.is_finite() {
        bail!("size must be non-negative and finite, got '{input}'");
    }
    let bytes = value * scale as f64;
    if bytes.fract() != 0.0 {
        bail!("size '{input}' is not a whole number of bytes");
    }
    Ok(bytes as u64)
}

/// Parse a clock such as "2.2 GHz" into Hz.
pub fn parse_clock(input: &str) -> Result<f64> {
    let (value, unit) = split_value_unit(input)?;
    let scale = match unit {
        "Hz" => 1.0,
        "kHz" | "KHz" => 1e3,
        "MHz" => 1e6,
        "GHz" => 1e9,
        other => bail!("unknown clock unit '{other}' in '{input}' (use e.g. GHz)"),
    };
    if !(value > 0.0) || !value.is_finite() {
        bail!("clock must be positive and finite, got '{input}'");
    }
    Ok(value * scale)
}

/// Parse a per-cycle data-path rating: "64 B/cy" is a combined
/// bidirectional rating, "32+32 B/cy" rates each direction separately
/// (load+store).
pub fn parse_data_path(input: &str) -> Result<DataPathBandwidth> {
    let trimmed = input.trim();
    let body = trimmed
        .strip_suffix("B/cy")
        .ok_or_else(|| anyhow!("data path '{trimmed}' must end in 'B/cy'"))?
        .trim();
    let parse_part = |s: &str| -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .with_context(|| format!("invalid number '{s}' in '{trimmed}'"))?;
        if !(v > 0.0) || !v.is_finite() {
            bail!("data-path rating must be positive, got '{trimmed}'");
        }
        Ok(v)
    };
    match body.split_once('+') {
        Some((load, store)) => Ok(DataPathBandwidth::PerDirection {
            load: parse_part(load)?,
            store: parse_part(store)?,
        }),
        None => Ok(DataPathBandwidth::Combined(parse_part(body)?)),
    }
}

/// Parse an element size such as "8 B" into bytes.
pub fn parse_element_size(input: &str) -> Result<u32> {
    let bytes = parse_size(input)?;
    u32::try_from(bytes).map_err(|_| anyhow!("element size '{input}' is too large"))
}
