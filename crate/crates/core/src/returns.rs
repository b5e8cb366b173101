//! Log returns at aggregation level `n`, windowed volatilities and autocorrelation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PriceSeries;

/// Default number of base returns per volatility window (one trading day of minutes).
pub const DEFAULT_WINDOW_LENGTH: usize = 390;

/// Log returns `ln(P(t) / P(t - nτ))` taken on a non-overlapping stride of `n` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    pub n: usize,
    /// Right-endpoint timestamp of each return.
    pub timestamps: Vec<i64>,
    pub session_ids: Vec<usize>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_pairs(writer, &self.timestamps, &self.values)
    }
}

/// Standard deviations of base returns over non-overlapping in-session windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilitySeries {
    pub sigmas: Vec<f64>,
    pub window_length: usize,
    /// Timestamp of the first return of each window.
    pub window_starts: Vec<i64>,
}

impl VolatilitySeries {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_pairs(writer, &self.window_starts, &self.sigmas)
    }
}

fn write_pairs<W: Write>(writer: W, timestamps: &[i64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "value"])?;
    for (t, v) in timestamps.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn log_returns(series: &PriceSeries, n: usize) -> Result<ReturnSeries> {
    if n == 0 {
        return Err(Error::invalid("aggregation level n must be at least 1"));
    }
    let prices = series.prices();
    let ts = series.timestamps();
    let mut out = ReturnSeries {
        values: Vec::new(),
        n,
        timestamps: Vec::new(),
        session_ids: Vec::new(),
    };
    for (sid, session) in series.sessions().into_iter().enumerate() {
        let mut left = session.start;
        while left + n < session.end {
            let right = left + n;
            out.values.push((prices[right] / prices[left]).ln());
            out.timestamps.push(ts[right]);
            out.session_ids.push(sid);
            left = right;
        }
    }
    if out.values.is_empty() {
        return Err(Error::insufficient(format!(
            "no session has the {} samples needed for n = {n}",
            n + 1
        )));
    }
    Ok(out)
}

/// Sample standard deviation (divisor `len - 1`); exactly zero for constant input.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn windowed_volatility(returns: &ReturnSeries, window_length: usize) -> Result<VolatilitySeries> {
    if returns.n != 1 {
        return Err(Error::invalid(format!(
            "windowed volatility needs base returns (n = 1), got n = {}",
            returns.n
        )));
    }
    if window_length < 2 {
        return Err(Error::invalid("window length must be at least 2"));
    }
    let mut out = VolatilitySeries {
        sigmas: Vec::new(),
        window_length,
        window_starts: Vec::new(),
    };
    let mut start = 0;
    while start < returns.len() {
        let sid = returns.session_ids[start];
        let end = start
            + returns.session_ids[start..]
                .iter()
                .take_while(|&&s| s == sid)
                .count();
        let mut w = start;
        while w + window_length <= end {
            out.sigmas
                .push(sample_std(&returns.values[w..w + window_length]));
            out.window_starts.push(returns.timestamps[w]);
            w += window_length;
        }
        start = end;
    }
    if out.sigmas.is_empty() {
        return Err(Error::insufficient(format!(
            "no session holds a full window of {window_length} returns"
        )));
    }
    Ok(out)
}

/// Biased autocorrelation estimate `ρ(ℓ)` for `ℓ = 0..=max_lag`.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if values.len() <= max_lag + 1 {
        return Err(Error::insufficient(format!(
            "autocorrelation to lag {max_lag} needs more than {} values, got {}",
            max_lag + 1,
            values.len()
        )));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    if c0 == 0.0 || values.iter().all(|v| *v == values[0]) {
        return Err(Error::ConstantSequence);
    }
    Ok((0..=max_lag)
        .map(|lag| {
            let c: f64 = centered
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            c / c0
        })
        .collect())
}
