//! CSV ingestion, column type inference and statistical profiling.
//!
//! Every statistic in [`ColumnProfile`] is scale-free: numeric aggregates are
//! taken over min-max-normalized values, and the remaining entries are ratios
//! or log-compressed counts. Multiplying a quantitative column by a positive
//! constant therefore leaves its profile unchanged.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Cells longer than this many bytes are truncated before profiling.
pub const MAX_CELL_BYTES: usize = 1024;

const TYPE_THRESHOLD: f64 = 0.95;
const LOG_COUNT_SCALE: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Quantitative,
    Nominal,
    Ordinal,
    Temporal,
    Boolean,
}

impl DataType {
    pub const ALL: [DataType; 5] = [
        DataType::Quantitative,
        DataType::Nominal,
        DataType::Ordinal,
        DataType::Temporal,
        DataType::Boolean,
    ];

    /// Measures are quantitative; every other type acts as a dimension.
    pub fn is_measure(self) -> bool {
        self == DataType::Quantitative
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Quantitative => "quantitative",
            DataType::Nominal => "nominal",
            DataType::Ordinal => "ordinal",
            DataType::Temporal => "temporal",
            DataType::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub index: usize,
    pub header: String,
    pub inferred_type: DataType,
    /// `None` marks an absent cell.
    pub values: Vec<Option<String>>,
}

impl Column {
    /// Builds a column and infers its type.
    pub fn new(index: usize, header: impl Into<String>, values: Vec<Option<String>>) -> Self {
        let mut column = Column {
            index,
            header: header.into(),
            inferred_type: DataType::Nominal,
            values,
        };
        column.inferred_type = infer_type(&column);
        column
    }

    fn present(&self) -> impl Iterator<Item = &str> {
        self.values.iter().flatten().map(|v| clip(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub table_id: String,
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl DataTable {
    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, index: usize) -> Result<&Column> {
        self.columns.get(index).ok_or(Error::Index {
            index,
            len: self.columns.len(),
        })
    }

    /// The JSON summary served to clients; cell values stay server-side.
    pub fn summary(&self) -> TableSummary {
        TableSummary {
            table_id: self.table_id.clone(),
            name: self.name.clone(),
            row_count: self.row_count,
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSummary {
                    index: c.index,
                    header: c.header.clone(),
                    data_type: c.inferred_type,
                    profile: profile(c),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub table_id: String,
    pub name: String,
    pub row_count: usize,
    pub columns: Vec<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub index: usize,
    pub header: String,
    #[serde(rename = "type")]
    pub data_type: DataType,
    pub profile: ColumnProfile,
}

/// Parses an RFC-4180 CSV document with a header row.
///
/// Ragged rows are padded with absent cells; cells beyond the header width
/// are dropped. Empty or whitespace-only cells are absent.
pub fn parse_csv(bytes: &[u8], name: &str) -> Result<DataTable> {
    let body = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(Error::EmptyInput("no header row".into()));
    }
    check_quotes(body)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::EmptyInput("no columns".into()));
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        for (i, column) in cells.iter_mut().enumerate() {
            let value = record
                .get(i)
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(str::to_string);
            column.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput("no data rows".into()));
    }

    let columns = headers
        .into_iter()
        .zip(cells)
        .enumerate()
        .map(|(i, (header, values))| Column::new(i, header, values))
        .collect();

    let digest = Sha256::digest(bytes);
    let table_id = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(DataTable {
        table_id,
        name: name.to_string(),
        columns,
        row_count: rows,
    })
}

fn csv_error(err: csv::Error) -> Error {
    let (line, byte) = err
        .position()
        .map(|p| (p.line(), p.byte()))
        .unwrap_or((0, 0));
    Error::MalformedCsv {
        line,
        byte,
        message: err.to_string(),
    }
}

/// The csv reader silently accepts a quote left open at end of input, so
/// quoting is validated up front. A quote only opens a quoted field at the
/// start of a field.
fn check_quotes(bytes: &[u8]) -> Result<()> {
    let mut line = 1u64;
    let mut field_start = true;
    let mut quoted = false;
    let mut opened = (0u64, 0u64);
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if quoted {
            if b == b'"' {
                if bytes.get(i + 1) == Some(&b'"') {
                    i += 1;
                } else {
                    quoted = false;
                }
            } else if b == b'\n' {
                line += 1;
            }
        } else {
            match b {
                b'"' if field_start => {
                    quoted = true;
                    opened = (line, i as u64);
                }
                b',' | b'\r' => {
                    field_start = true;
                    i += 1;
                    continue;
                }
                b'\n' => {
                    line += 1;
                    field_start = true;
                    i += 1;
                    continue;
                }
                _ => {}
            }
            field_start = false;
        }
        i += 1;
    }
    if quoted {
        return Err(Error::MalformedCsv {
            line: opened.0,
            byte: opened.1,
            message: "unclosed quoted field".into(),
        });
    }
    Ok(())
}

fn clip(value: &str) -> &str {
    if value.len() <= MAX_CELL_BYTES {
        return value;
    }
    let mut end = MAX_CELL_BYTES;
    while !value.is_char_boundary(end) {
        end -= 1;
    }
    &value[..end]
}

pub(crate) fn parse_number(value: &str) -> Option<f64> {
    let v = value.trim();
    // Rust accepts "inf"/"nan" spellings; only finite decimal numbers count.
    if !v.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// ISO-8601 date or date-time, as seconds since the Unix epoch.
fn parse_iso_temporal(value: &str) -> Option<f64> {
    let v = value.trim();
    if let Ok(d) = NaiveDate::parse_from_str(v, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(v, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(v) {
        return Some(dt.timestamp() as f64);
    }
    if v.len() == 7 && v.as_bytes()[4] == b'-' {
        if let Ok(d) = NaiveDate::parse_from_str(&format!("{v}-01"), "%Y-%m-%d") {
            return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
        }
    }
    None
}

fn year_value(value: &str) -> Option<f64> {
    let v = value.trim();
    if v.len() != 4 || !v.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let year: u32 = v.parse().ok()?;
    (1500..=2100).contains(&year).then_some(year as f64)
}

fn header_suggests_year(header: &str) -> bool {
    let h = header.to_lowercase();
    h.contains("year") || h.contains("date")
}

fn is_boolean_token(value: &str) -> bool {
    matches!(
        value.trim().to_lowercase().as_str(),
        "true" | "false" | "0" | "1" | "yes" | "no"
    )
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const WEEKDAYS: [&str; 7] = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const LEVELS: [&str; 3] = ["low", "medium", "high"];
const SIZES: [&str; 3] = ["small", "medium", "large"];

fn month_rank(value: &str) -> Option<usize> {
    let v = value.trim().to_lowercase();
    MONTHS
        .iter()
        .position(|m| *m == v || (v.len() == 3 && m.starts_with(&v)) || (v == "sept" && *m == "september"))
}

fn weekday_rank(value: &str) -> Option<usize> {
    let v = value.trim().to_lowercase();
    WEEKDAYS
        .iter()
        .position(|d| *d == v || (v.len() == 3 && d.starts_with(&v)))
}

fn vocabulary_rank(vocabulary: &[&str], value: &str) -> Option<usize> {
    let v = value.trim().to_lowercase();
    vocabulary.iter().position(|w| *w == v)
}

/// Rank of `value` within the first ordered vocabulary that contains every
/// distinct value of the column, if one exists.
fn ordinal_ranker(values: &[&str]) -> Option<fn(&str) -> Option<usize>> {
    let rankers: [fn(&str) -> Option<usize>; 4] = [
        month_rank,
        weekday_rank,
        |v| vocabulary_rank(&LEVELS, v),
        |v| vocabulary_rank(&SIZES, v),
    ];
    rankers
        .into_iter()
        .find(|rank| values.iter().all(|v| rank(v).is_some()))
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Deterministic type classification; first matching rule wins:
/// boolean, temporal, quantitative, ordinal, nominal.
pub fn infer_type(column: &Column) -> DataType {
    let present: Vec<&str> = column.present().collect();
    if present.is_empty() {
        return DataType::Nominal;
    }
    let total = present.len();
    let share = |pred: &dyn Fn(&str) -> bool| fraction(present.iter().filter(|v| pred(v)).count(), total);

    if share(&is_boolean_token) >= TYPE_THRESHOLD {
        return DataType::Boolean;
    }
    if share(&|v| parse_iso_temporal(v).is_some()) >= TYPE_THRESHOLD
        || (header_suggests_year(&column.header) && present.iter().all(|v| year_value(v).is_some()))
    {
        return DataType::Temporal;
    }
    if share(&|v| parse_number(v).is_some()) >= TYPE_THRESHOLD {
        return DataType::Quantitative;
    }
    if ordinal_ranker(&present).is_some() {
        return DataType::Ordinal;
    }
    DataType::Nominal
}

macro_rules! profile_fields {
    ($($name:ident),* $(,)?) => {
        /// Scale-free column statistics, in feature-layout order.
        #[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
        pub struct ColumnProfile {
            $(pub $name: f64,)*
        }

        impl ColumnProfile {
            pub const LEN: usize = [$(stringify!($name)),*].len();
            pub const NAMES: [&'static str; Self::LEN] = [$(stringify!($name)),*];

            pub fn to_array(&self) -> [f64; Self::LEN] {
                [$(self.$name),*]
            }
        }
    };
}

profile_fields!(
    row_count_log,
    missing_ratio,
    distinct_count_log,
    distinct_ratio,
    norm_mean,
    norm_std,
    norm_median,
    skewness_clamped,
    range_log,
    monotonic_increasing,
    monotonic_decreasing,
    is_sorted_any,
    negative_ratio,
    zero_ratio,
    integer_ratio,
    outlier_ratio,
    mean_char_length_log,
    max_char_length_log,
    is_year_like,
    month_name_ratio,
    weekday_name_ratio,
    all_unique_flag,
    mode_frequency_ratio,
    entropy_norm,
);

fn log_count(count: f64) -> f64 {
    (1.0 + count).ln() / (1.0 + LOG_COUNT_SCALE).ln()
}

/// Numeric reading of a column: parsed numbers for quantitative columns,
/// epoch seconds (or years) for temporal ones, nothing otherwise.
fn numeric_view(column: &Column, present: &[&str]) -> Vec<f64> {
    match column.inferred_type {
        DataType::Quantitative => present.iter().filter_map(|v| parse_number(v)).collect(),
        DataType::Temporal => present
            .iter()
            .filter_map(|v| parse_iso_temporal(v).or_else(|| year_value(v)))
            .collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum DistinctKey<'a> {
    Number(u64),
    Text(&'a str),
}

pub fn profile(column: &Column) -> ColumnProfile {
    let n = column.values.len();
    let present: Vec<&str> = column.present().collect();
    let p = present.len();
    if p == 0 {
        return ColumnProfile {
            missing_ratio: if n == 0 { 0.0 } else { 1.0 },
            ..ColumnProfile::default()
        };
    }

    let mut stats = ColumnProfile {
        row_count_log: log_count(n as f64),
        missing_ratio: fraction(n - p, n),
        ..ColumnProfile::default()
    };

    // Histogram of values; numbers are keyed by value so "1" and "1.0" agree.
    let quantitative = column.inferred_type == DataType::Quantitative;
    let mut histogram: BTreeMap<DistinctKey<'_>, usize> = BTreeMap::new();
    for v in &present {
        let key = match parse_number(v).filter(|_| quantitative) {
            Some(x) => DistinctKey::Number((x + 0.0).to_bits()),
            None => DistinctKey::Text(v),
        };
        *histogram.entry(key).or_default() += 1;
    }
    let distinct = histogram.len();
    stats.distinct_count_log = log_count(distinct as f64);
    stats.distinct_ratio = fraction(distinct, p);
    stats.all_unique_flag = if distinct == p { 1.0 } else { 0.0 };
    let mode = histogram.values().copied().max().unwrap_or(0);
    stats.mode_frequency_ratio = fraction(mode, p);
    if distinct >= 2 {
        let entropy: f64 = histogram
            .values()
            .map(|&c| {
                let q = c as f64 / p as f64;
                -q * q.ln()
            })
            .sum();
        stats.entropy_norm = (entropy / (distinct as f64).ln()).clamp(0.0, 1.0);
    }

    let numbers = numeric_view(column, &present);
    if !numbers.is_empty() {
        numeric_stats(&numbers, &mut stats);
    }

    let steps = order_steps(column, &present, &numbers);
    if !steps.is_empty() {
        use std::cmp::Ordering::*;
        let up = steps.iter().filter(|o| **o == Greater).count();
        let down = steps.iter().filter(|o| **o == Less).count();
        stats.monotonic_increasing = fraction(up, steps.len());
        stats.monotonic_decreasing = fraction(down, steps.len());
        stats.is_sorted_any = if up == 0 || down == 0 { 1.0 } else { 0.0 };
    }

    // Textual lengths of numbers depend on their scale, so they are only
    // profiled for non-quantitative columns.
    if !quantitative {
        let lengths: Vec<usize> = present.iter().map(|v| v.chars().count()).collect();
        let mean = lengths.iter().sum::<usize>() as f64 / p as f64;
        let max = lengths.iter().copied().max().unwrap_or(0) as f64;
        let scale = (1.0 + MAX_CELL_BYTES as f64).ln();
        stats.mean_char_length_log = ((1.0 + mean).ln() / scale).min(1.0);
        stats.max_char_length_log = ((1.0 + max).ln() / scale).min(1.0);
    }

    if column.inferred_type == DataType::Temporal && present.iter().all(|v| year_value(v).is_some()) {
        stats.is_year_like = 1.0;
    }
    stats.month_name_ratio = fraction(present.iter().filter(|v| month_rank(v).is_some()).count(), p);
    stats.weekday_name_ratio =
        fraction(present.iter().filter(|v| weekday_rank(v).is_some()).count(), p);
    stats
}

fn numeric_stats(xs: &[f64], stats: &mut ColumnProfile) {
    let len = xs.len() as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let normalized: Vec<f64> = if range > 0.0 && range.is_finite() {
        xs.iter().map(|x| ((x - min) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; xs.len()]
    };

    let mean = normalized.iter().sum::<f64>() / len;
    let m2 = normalized.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len;
    let std = m2.sqrt();
    stats.norm_mean = mean;
    stats.norm_std = std;
    let mut sorted = normalized.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    stats.norm_median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };

    if xs.len() >= 3 && std > 1e-12 {
        let m3 = normalized.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / len;
        stats.skewness_clamped = (m3 / m2.powf(1.5)).clamp(-3.0, 3.0) / 3.0;
    }
    if std > 1e-12 {
        let outliers = normalized
            .iter()
            .filter(|x| ((*x - mean) / std).abs() > 3.0)
            .count();
        stats.outlier_ratio = outliers as f64 / len;
    }

    let magnitude = min.abs().max(max.abs());
    if magnitude > 0.0 && range.is_finite() {
        stats.range_log = ((1.0 + range / magnitude).ln() / 3f64.ln()).clamp(0.0, 1.0);
    }

    stats.negative_ratio = xs.iter().filter(|x| **x < 0.0).count() as f64 / len;
    stats.zero_ratio = xs.iter().filter(|x| **x == 0.0).count() as f64 / len;

    // Share of values on the integer lattice spanned by the smallest non-zero
    // magnitude; unlike a plain "is integer" test this survives rescaling.
    let unit = xs
        .iter()
        .map(|x| x.abs())
        .filter(|x| *x > 0.0)
        .fold(f64::INFINITY, f64::min);
    stats.integer_ratio = if unit.is_finite() {
        xs.iter()
            .filter(|x| {
                let q = *x / unit;
                (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
            })
            .count() as f64
            / len
    } else {
        1.0
    };
}

/// Orderings between consecutive present values, in row order.
fn order_steps(column: &Column, present: &[&str], numbers: &[f64]) -> Vec<std::cmp::Ordering> {
    if !numbers.is_empty() {
        return numbers.windows(2).map(|w| w[1].total_cmp(&w[0])).collect();
    }
    if column.inferred_type == DataType::Ordinal {
        if let Some(rank) = ordinal_ranker(present) {
            let ranks: Vec<usize> = present.iter().filter_map(|v| rank(v)).collect();
            return ranks.windows(2).map(|w| w[1].cmp(&w[0])).collect();
        }
    }
    present
        .windows(2)
        .map(|w| w[1].to_lowercase().cmp(&w[0].to_lowercase()))
        .collect()
}
