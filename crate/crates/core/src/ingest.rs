//! Loading, validating and resampling minute price series.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price path `P(t)` sampled on a regular base interval, split into trading sessions.
///
/// Timestamps are epoch seconds. A session break sits at index `i` when the gap
/// between samples `i - 1` and `i` exceeds the base interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    timestamps: Vec<i64>,
    prices: Vec<f64>,
    session_breaks: Vec<usize>,
    base_interval: u32,
}

impl PriceSeries {
    /// Builds a series and detects session breaks from timestamp gaps.
    pub fn new(timestamps: Vec<i64>, prices: Vec<f64>, base_interval: u32) -> Result<Self> {
        if base_interval == 0 {
            return Err(Error::invalid("base interval must be at least one minute"));
        }
        if timestamps.len() != prices.len() {
            return Err(Error::invalid(format!(
                "{} timestamps but {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if timestamps.is_empty() {
            return Err(Error::NoValidRows { dropped: 0 });
        }
        if let Some(i) = prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid(format!(
                "price at index {i} is not a positive finite number"
            )));
        }
        if let Some(i) = (1..timestamps.len()).find(|&i| timestamps[i] <= timestamps[i - 1]) {
            return Err(Error::NonMonotone { index: i });
        }
        let gap = i64::from(base_interval) * 60;
        let session_breaks = (1..timestamps.len())
            .filter(|&i| timestamps[i] - timestamps[i - 1] > gap)
            .collect();
        Ok(Self {
            timestamps,
            prices,
            session_breaks,
            base_interval,
        })
    }

    /// Contiguous series (no gaps) whose log increments are `log_returns`.
    pub fn from_log_returns(
        start: i64,
        base_interval: u32,
        initial_price: f64,
        log_returns: &[f64],
    ) -> Result<Self> {
        if !(initial_price.is_finite() && initial_price > 0.0) {
            return Err(Error::invalid("initial price must be positive"));
        }
        let step = i64::from(base_interval) * 60;
        let mut timestamps = Vec::with_capacity(log_returns.len() + 1);
        let mut prices = Vec::with_capacity(log_returns.len() + 1);
        let mut log_price = initial_price.ln();
        timestamps.push(start);
        prices.push(initial_price);
        for (k, r) in log_returns.iter().enumerate() {
            log_price += r;
            timestamps.push(start + step * (k as i64 + 1));
            prices.push(log_price.exp());
        }
        Self::new(timestamps, prices, base_interval)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn session_breaks(&self) -> &[usize] {
        &self.session_breaks
    }

    /// Base interval τ in minutes.
    pub fn base_interval(&self) -> u32 {
        self.base_interval
    }

    /// Index ranges of the trading sessions, in order.
    pub fn sessions(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.session_breaks.len() + 1);
        let mut start = 0;
        for &b in &self.session_breaks {
            out.push(start..b);
            start = b;
        }
        out.push(start..self.len());
        out
    }

    /// Same samples treated as a single session (overnight returns included).
    pub fn merge_sessions(mut self) -> Self {
        self.session_breaks.clear();
        self
    }

    /// Writes the ingest-compatible CSV form (`timestamp,close`, epoch seconds).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "close"])?;
        for (t, p) in self.timestamps.iter().zip(&self.prices) {
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Keeps the last price of every complete `n`-sample bucket inside each session.
///
/// Bucket counters restart at every session break and incomplete trailing
/// buckets are dropped, so no resampled pair straddles a break.
pub fn resample(series: &PriceSeries, n: usize) -> Result<PriceSeries> {
    if n == 0 {
        return Err(Error::invalid("resampling factor must be at least 1"));
    }
    if n == 1 {
        return Ok(series.clone());
    }
    let base_interval = u32::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(series.base_interval))
        .ok_or_else(|| Error::invalid(format!("resampling factor {n} too large")))?;

    let mut timestamps = Vec::new();
    let mut prices = Vec::new();
    let mut session_breaks = Vec::new();
    for session in series.sessions() {
        let first_kept = timestamps.len();
        let mut idx = session.start + n - 1;
        while idx < session.end {
            timestamps.push(series.timestamps[idx]);
            prices.push(series.prices[idx]);
            idx += n;
        }
        if first_kept > 0 && timestamps.len() > first_kept {
            session_breaks.push(first_kept);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::insufficient(format!(
            "no session holds a complete bucket of {n} samples"
        )));
    }
    Ok(PriceSeries {
        timestamps,
        prices,
        session_breaks,
        base_interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// Integer epoch seconds if the field parses as one, ISO-8601 otherwise.
    #[default]
    Auto,
    Iso8601,
    EpochSeconds,
}

/// Column mapping and parsing options for delimited price files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub timestamp_column: String,
    pub price_column: String,
    pub timestamp_format: TimestampFormat,
    pub delimiter: u8,
    /// Reject out-of-order rows instead of sorting them.
    pub strict: bool,
    pub base_interval: u32,
    pub include_cross_session: bool,
}

impl Default for FormatSpec {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".to_string(),
            price_column: "close".to_string(),
            timestamp_format: TimestampFormat::Auto,
            delimiter: b',',
            strict: false,
            base_interval: 1,
            include_cross_session: false,
        }
    }
}

/// Row bookkeeping from [`load_prices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_invalid_price: usize,
    pub duplicates_replaced: usize,
}

pub fn load_prices(path: &Path, format: &FormatSpec) -> Result<(PriceSeries, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_prices(BufReader::new(file), format)
}

/// Parses delimited price data from any reader; [`load_prices`] wraps this for files.
pub fn read_prices<R: Read>(reader: R, format: &FormatSpec) -> Result<(PriceSeries, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = find(&format.timestamp_column)?;
    let px_col = find(&format.price_column)?;

    let mut report = LoadReport::default();
    let mut rows: Vec<(i64, f64)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let ts_field = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(ts_field, format.timestamp_format).ok_or_else(|| {
            Error::Parse {
                line,
                message: format!("unparseable timestamp `{ts_field}`"),
            }
        })?;
        match parse_price(record.get(px_col).unwrap_or(""), line)? {
            Some(p) if p > 0.0 => rows.push((ts, p)),
            _ => report.dropped_invalid_price += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::NoValidRows {
            dropped: report.dropped_invalid_price,
        });
    }

    if format.strict {
        if let Some(i) = (1..rows.len()).find(|&i| rows[i].0 < rows[i - 1].0) {
            return Err(Error::NonMonotone { index: i });
        }
    } else {
        rows.sort_by_key(|r| r.0);
    }

    // Duplicate timestamps: the later record wins.
    let mut deduped: Vec<(i64, f64)> = Vec::with_capacity(rows.len());
    for row in rows {
        match deduped.last_mut() {
            Some(last) if last.0 == row.0 => {
                *last = row;
                report.duplicates_replaced += 1;
            }
            _ => deduped.push(row),
        }
    }

    let (timestamps, prices) = deduped.into_iter().unzip();
    let mut series = PriceSeries::new(timestamps, prices, format.base_interval)?;
    if format.include_cross_session {
        series = series.merge_sessions();
    }
    Ok((series, report))
}

fn parse_price(field: &str, line: u64) -> Result<Option<f64>> {
    if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("null")
    {
        return Ok(None);
    }
    let p: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("unparseable price `{field}`"),
    })?;
    Ok(if p.is_finite() { Some(p) } else { None })
}

fn parse_timestamp(field: &str, format: TimestampFormat) -> Option<i64> {
    match format {
        TimestampFormat::EpochSeconds => field.parse().ok(),
        TimestampFormat::Iso8601 => parse_iso8601(field),
        TimestampFormat::Auto => field.parse().ok().or_else(|| parse_iso8601(field)),
    }
}

fn parse_iso8601(field: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp());
    }
    const NAIVE: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    NAIVE
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(field, f).ok())
        .map(|dt| dt.and_utc().timestamp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<(PriceSeries, LoadReport)> {
        read_prices(text.as_bytes(), &FormatSpec::default())
    }

    fn minutes(ts: &[i64]) -> Vec<i64> {
        ts.iter().map(|m| 1_600_000_000 + 60 * m).collect()
    }

    #[test]
    fn minimal_file() {
        let (s, report) =
            load("timestamp,close\n1600000000,100.0\n1600000060,101.0\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.session_breaks().is_empty());
        assert_eq!(report.dropped_invalid_price, 0);
    }

    #[test]
    fn negative_price_row_dropped() {
        let (s, report) =
            load("timestamp,close\n1600000000,100\n1600000060,-5\n1600000120,101\n").unwrap();
        assert_eq!(report.dropped_invalid_price, 1);
        assert_eq!(s.prices(), &[100.0, 101.0]);
        // the dropped minute leaves a gap, hence a break
        assert_eq!(s.session_breaks(), &[1]);
    }

    #[test]
    fn overnight_gap_is_a_session_break() {
        let text = "timestamp,open,close\n\
                    2024-03-04T15:58:00Z,1,100\n\
                    2024-03-04T15:59:00Z,1,100.5\n\
                    2024-03-04T16:00:00Z,1,101\n\
                    2024-03-05T09:30:00Z,1,102\n\
                    2024-03-05T09:31:00Z,1,103\n";
        let (s, _) = load(text).unwrap();
        assert_eq!(s.session_breaks(), &[3]);
        assert_eq!(s.sessions(), vec![0..3, 3..5]);

        let spec = FormatSpec {
            include_cross_session: true,
            ..FormatSpec::default()
        };
        let (merged, _) = read_prices(text.as_bytes(), &spec).unwrap();
        assert!(merged.session_breaks().is_empty());
    }

    #[test]
    fn naive_iso_and_custom_columns() {
        let spec = FormatSpec {
            timestamp_column: "Date".into(),
            price_column: "Price".into(),
            delimiter: b';',
            ..FormatSpec::default()
        };
        let text = "date;price\n2024-01-02 09:30;10\n2024-01-02 09:31;11\n";
        let (s, _) = read_prices(text.as_bytes(), &spec).unwrap();
        assert_eq!(s.timestamps()[1] - s.timestamps()[0], 60);
    }

    #[test]
    fn missing_column_named() {
        let err = load("timestamp,open\n1,2\n").unwrap_err();
        match err {
            Error::MissingColumn(c) => assert_eq!(c, "close"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_valid_rows() {
        assert!(matches!(
            load("timestamp,close\n1600000000,0\n1600000060,\n"),
            Err(Error::NoValidRows { dropped: 2 })
        ));
    }

    #[test]
    fn unsorted_rows_sorted_unless_strict() {
        let text = "timestamp,close\n1600000060,2\n1600000000,1\n";
        let (s, _) = load(text).unwrap();
        assert_eq!(s.prices(), &[1.0, 2.0]);
        let strict = FormatSpec {
            strict: true,
            ..FormatSpec::default()
        };
        assert!(matches!(
            read_prices(text.as_bytes(), &strict),
            Err(Error::NonMonotone { index: 1 })
        ));
    }

    #[test]
    fn duplicate_timestamp_keeps_last() {
        let text = "timestamp,close\n1600000000,1\n1600000000,1.5\n1600000060,2\n";
        let (s, report) = load(text).unwrap();
        assert_eq!(s.prices(), &[1.5, 2.0]);
        assert_eq!(report.duplicates_replaced, 1);
    }

    #[test]
    fn unreadable_file() {
        let err = load_prices(Path::new("/nonexistent/prices.csv"), &FormatSpec::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn resample_identity() {
        let s = PriceSeries::new(minutes(&[0, 1, 2, 5, 6]), vec![1.0, 2.0, 3.0, 4.0, 5.0], 1)
            .unwrap();
        assert_eq!(resample(&s, 1).unwrap(), s);
        assert!(resample(&s, 0).is_err());
    }

    #[test]
    fn resample_keeps_bucket_ends() {
        let prices: Vec<f64> = (0..6).map(|i| 100.0 + i as f64).collect();
        let s = PriceSeries::new(minutes(&[0, 1, 2, 3, 4, 5]), prices, 1).unwrap();
        let r = resample(&s, 3).unwrap();
        assert_eq!(r.prices(), &[102.0, 105.0]);
        assert_eq!(r.base_interval(), 3);
    }

    #[test]
    fn resample_resets_at_session_break() {
        // 12 points: session A minutes 0..=6 (7 samples), session B after a gap (5 samples).
        let ts = minutes(&[0, 1, 2, 3, 4, 5, 6, 100, 101, 102, 103, 104]);
        let prices: Vec<f64> = (0..12).map(|i| 10.0 + i as f64).collect();
        let s = PriceSeries::new(ts, prices, 1).unwrap();
        assert_eq!(s.session_breaks(), &[7]);
        let r = resample(&s, 5).unwrap();
        // bucket [0..=4] -> index 4; partial [5, 6] dropped; bucket [7..=11] -> index 11
        assert_eq!(r.prices(), &[14.0, 21.0]);
        assert_eq!(r.session_breaks(), &[1]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = PriceSeries::from_log_returns(1_600_000_000, 1, 100.0, &[0.01, -0.003, 1e-7])
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let (back, _) = load(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invariants_enforced_by_constructor() {
        assert!(PriceSeries::new(vec![0, 60], vec![1.0], 1).is_err());
        assert!(PriceSeries::new(vec![0, 60], vec![1.0, 0.0], 1).is_err());
        assert!(PriceSeries::new(vec![60, 60], vec![1.0, 1.0], 1).is_err());
    }
}
