//! CSV emission and ingestion.
//!
//! Output schemas are versioned via a leading comment line and hold
//! bandwidth in GB/s (10^9 bytes/second) and time in seconds.  Emission
//! builds the document as a plain string with fixed-precision number
//! formatting so that equal inputs yield byte-identical files.

use anyhow::{bail, Context, Result};
use bwshare_core::analysis::DurationSample;

/// Version tag emitted as the first line of every CSV document.
pub const CSV_VERSION_HEADER: &str = "# bwshare-csv v1";

/// Deterministic CSV builder: version line, comments, one header, rows.
pub struct CsvDoc {
    buf: String,
    columns: usize,
}

impl CsvDoc {
    pub fn new() -> Self {
        let mut buf = String::new();
        buf.push_str(CSV_VERSION_HEADER);
        buf.push('\n');
        CsvDoc { buf, columns: 0 }
    }

    /// Add a `# `-prefixed comment line (before or after the header).
    pub fn comment(&mut self, text: &str) {
        self.buf.push_str("# ");
        self.buf.push_str(text);
        self.buf.push('\n');
    }

    pub fn header(&mut self, columns: &[&str]) {
        self.columns = columns.len();
        let line: Vec<String> = columns.iter().map(|c| quote_field(c)).collect();
        self.buf.push_str(&line.join(","));
        self.buf.push('\n');
    }

    /// Append one row; panics if the field count disagrees with the header
    /// (an internal schema bug, not an input error).
    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(
            fields.len(),
            self.columns,
            "CSV row width {} != header width {}",
            fields.len(),
            self.columns
        );
        let line: Vec<String> = fields.iter().map(|f| quote_field(f)).collect();
        self.buf.push_str(&line.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

fn quote_field(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Bandwidth column value: GB/s with six decimals.
pub fn fmt_gbs(bytes_per_second: f64) -> String {
    format!("{:.6}", bytes_per_second / 1e9)
}

/// Dimensionless column value (shares, fractions, errors): six decimals.
pub fn fmt_ratio(value: f64) -> String {
    format!("{value:.6}")
}

/// Time column value: seconds with nine decimals (nanosecond resolution).
pub fn fmt_seconds(seconds: f64) -> String {
    format!("{seconds:.9}")
}

/// One observed two-group bandwidth measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub machine: String,
    pub kernel1: String,
    pub n1: u32,
    pub kernel2: String,
    pub n2: u32,
    pub observed1_gbs: f64,
    pub observed2_gbs: f64,
}

/// Required header of a measurements CSV, in canonical order (any column
/// order is accepted on input).
pub const MEASUREMENT_COLUMNS: [&str; 7] = [
    "machine",
    "kernel1",
    "n1",
    "kernel2",
    "n2",
    "observed1_gbs",
    "observed2_gbs",
];

/// Required header of a duration-trace CSV.
pub const TRACE_COLUMNS: [&str; 3] = ["rank", "start_s", "end_s"];

fn reader_for(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Map each required column name to its index in the header, failing with
/// the first missing column named.
fn column_indices(
    headers: &csv::StringRecord,
    required: &[&str],
    what: &str,
) -> Result<Vec<usize>> {
    let mut indices = Vec::with_capacity(required.len());
    for name in required {
        match headers.iter().position(|h| h == *name) {
            Some(i) => indices.push(i),
            None => bail!(
                "{what} CSV is missing column '{name}' (expected header: {}; found: {})",
                required.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        }
    }
    Ok(indices)
}

fn field<'r>(record: &'r csv::StringRecord, index: usize, name: &str, line: u64) -> Result<&'r str> {
    record
        .get(index)
        .with_context(|| format!("line {line}: row has no '{name}' field"))
}

/// Parse a measurements document (two-group observed bandwidths).
pub fn parse_measurements(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut reader = reader_for(text);
    let headers = reader.headers().context("measurements CSV header")?.clone();
    let idx = column_indices(&headers, &MEASUREMENT_COLUMNS, "measurements")?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.context("measurements CSV row")?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize, name: &str| field(&row, idx[i], name, line);
        let parse_u32 = |i: usize, name: &str| -> Result<u32> {
            get(i, name)?
                .parse()
                .with_context(|| format!("line {line}: column '{name}' is not a count"))
        };
        let parse_f64 = |i: usize, name: &str| -> Result<f64> {
            get(i, name)?
                .parse()
                .with_context(|| format!("line {line}: column '{name}' is not a number"))
        };
        records.push(MeasurementRecord {
            machine: get(0, "machine")?.to_string(),
            kernel1: get(1, "kernel1")?.to_string(),
            n1: parse_u32(2, "n1")?,
            kernel2: get(3, "kernel2")?.to_string(),
            n2: parse_u32(4, "n2")?,
            observed1_gbs: parse_f64(5, "observed1_gbs")?,
            observed2_gbs: parse_f64(6, "observed2_gbs")?,
        });
    }
    Ok(records)
}

/// Parse a duration-trace document (`rank,start_s,end_s`).
pub fn parse_trace(text: &str) -> Result<Vec<DurationSample>> {
    let mut reader = reader_for(text);
    let headers = reader.headers().context("trace CSV header")?.clone();
    let idx = column_indices(&headers, &TRACE_COLUMNS, "trace")?;
    let mut samples = Vec::new();
    for row in reader.records() {
        let row = row.context("trace CSV row")?;
        let line = row.position().map_or(0, |p| p.line());
        let rank: u32 = field(&row, idx[0], "rank", line)?
            .parse()
            .with_context(|| format!("line {line}: column 'rank' is not a count"))?;
        let start_time: f64 = field(&row, idx[1], "start_s", line)?
            .parse()
            .with_context(|| format!("line {line}: column 'start_s' is not a number"))?;
        let end_time: f64 = field(&row, idx[2], "end_s", line)?
            .parse()
            .with_context(|| format!("line {line}: column 'end_s' is not a number"))?;
        samples.push(DurationSample {
            rank,
            start_time,
            end_time,
        });
    }
    Ok(samples)
}
