use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FormatSpec, TimestampFormat};
use crate::mixture::{ModelKind, VolatilityModel};

/// `key = value` settings read from `--config`. Keys accept `-` or `_`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(v);
            values.insert(normalize_key(k), v.to_string());
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    /// Command-line value if given, else the config value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModelChoice {
    PowerLaw,
    StretchedExp,
    #[default]
    Auto,
}

impl FromStr for TailModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "power_law" | "powerlaw" | "pareto" => Ok(Self::PowerLaw),
            "stretched_exp" | "stretched" => Ok(Self::StretchedExp),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Config(format!(
                "unknown tail model `{other}` (power_law, stretched_exp, auto)"
            ))),
        }
    }
}

impl fmt::Display for TailModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PowerLaw => "power_law",
            Self::StretchedExp => "stretched_exp",
            Self::Auto => "auto",
        })
    }
}

pub fn parse_timestamp_format(s: &str) -> Result<TimestampFormat> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "auto" => Ok(TimestampFormat::Auto),
        "iso" | "iso8601" | "iso_8601" => Ok(TimestampFormat::Iso8601),
        "epoch" | "epoch_seconds" | "unix" => Ok(TimestampFormat::EpochSeconds),
        other => Err(Error::Config(format!("unknown timestamp format `{other}`"))),
    }
}

pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(Error::Config(format!(
            "delimiter must be a single ASCII character, got `{s}`"
        ))),
    }
}

/// Comma-separated scales; must be non-empty, positive and strictly increasing.
pub fn parse_scales(s: &str) -> Result<Vec<usize>> {
    let scales = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Config(format!("scale `{t}` is not a positive integer")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_scales(&scales)?;
    Ok(scales)
}

pub fn validate_scales(scales: &[usize]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Config("scales list is empty".into()));
    }
    if scales[0] == 0 {
        return Err(Error::Config("scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "scales must be strictly increasing, got {scales:?}"
        )));
    }
    Ok(())
}

pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("range must be `lo,hi` with 0 < lo < hi, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Parses `family:key=value,...` or `@file.json`.
///
/// Families: `point_mass:sigma0`, `pareto:alpha,sigma_min`,
/// `stretched_exp:lambda,beta,sigma_lo`, `lognormal:mu,s`.
pub fn parse_model(s: &str) -> Result<VolatilityModel> {
    if let Some(path) = s.strip_prefix('@') {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kind: ModelKind = serde_json::from_str(&text)?;
        return VolatilityModel::new(kind);
    }
    let (family, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut params = HashMap::new();
    for item in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("model parameter `{item}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("model parameter `{item}` is not numeric")))?;
        params.insert(k.trim().to_ascii_lowercase(), v);
    }
    let take = |key: &str| -> Result<f64> {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("model `{family}` needs `{key}`")))
    };
    let kind = match family.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "point_mass" => ModelKind::PointMass {
            sigma0: take("sigma0")?,
        },
        "pareto" | "pareto_tail" => ModelKind::ParetoTail {
            alpha: take("alpha")?,
            sigma_min: take("sigma_min")?,
        },
        "stretched_exp" => ModelKind::StretchedExp {
            lambda: take("lambda")?,
            beta: take("beta")?,
            sigma_lo: take("sigma_lo")?,
        },
        "lognormal" => ModelKind::LogNormal {
            mu: take("mu")?,
            s: take("s")?,
        },
        other => return Err(Error::Config(format!("unknown volatility model `{other}`"))),
    };
    VolatilityModel::new(kind)
}

/// Resolved settings shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub format: FormatSpec,
    pub window_length: usize,
    pub scales: Vec<usize>,
    pub tail_model: TailModelChoice,
    pub fit_range: Option<(f64, f64)>,
    pub bin_count: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        validate_scales(&self.scales)?;
        if self.window_length < 2 {
            return Err(Error::Config("window length must be at least 2".into()));
        }
        if self.bin_count == 0 {
            return Err(Error::Config("bin count must be positive".into()));
        }
        if self.format.base_interval == 0 {
            return Err(Error::Config("base interval must be at least 1 minute".into()));
        }
        Ok(())
    }
}
