//! Command-line front end. Every subcommand writes under `--out DIR` and keeps a
//! `manifest.json` there listing each artifact with the stage that produced it.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::distribution::DEFAULT_BIN_COUNT;
use crate::error::Error;
use crate::ingest::FormatSpec;
use crate::returns::DEFAULT_WINDOW_LENGTH;
use crate::synth::SynthSpec;

use artifacts::ArtifactWriter;
use commands::{InStage, StageError, StageResult, TailFitRecord};
use config::{
    parse_delimiter, parse_model, parse_range, parse_scales, parse_timestamp_format, ConfigFile,
    RunConfig, TailModelChoice,
};

pub const DEFAULT_SCALES: [usize; 4] = [5, 15, 30, 60];

#[derive(Debug, Parser)]
#[command(name = "volmix", version, about = "Volatility-mixture analysis of price series")]
pub struct Cli {
    /// `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, validate and optionally resample price files.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Keep every n-th sample within sessions.
        #[arg(long)]
        resample: Option<usize>,
    },
    /// Full pipeline: returns, volatilities, tail fit, prediction, collapse.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Fit a tail model to one column of positive values.
    FitTail {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Column holding the samples.
        #[arg(long)]
        value_column: Option<String>,
    },
    /// Evaluate the predicted rescaled density for a volatility model.
    Predict {
        #[command(flatten)]
        out: OutArgs,
        /// e.g. `pareto:alpha=4,sigma_min=0.001` or `@model.json`.
        #[arg(long, conflicts_with = "fit")]
        model: Option<String>,
        /// A `tail_fit.json` written by `analyze` or `fit-tail`.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        z_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Also write unscaled predictions at these aggregation levels.
        #[arg(long)]
        scales: Option<String>,
    },
    /// Generate a synthetic price path from a volatility model.
    Synth {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        window_length: Option<usize>,
        #[arg(long)]
        total_returns: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        initial_price: Option<f64>,
    },
    /// Pairwise distances between rescaled return distributions.
    Collapse {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        scales: Option<String>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Input CSV; repeat for several files.
    #[arg(long = "input", short = 'i')]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub timestamp_column: Option<String>,
    #[arg(long)]
    pub price_column: Option<String>,
    /// auto, iso8601 or epoch.
    #[arg(long)]
    pub timestamp_format: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Reject out-of-order rows instead of sorting.
    #[arg(long)]
    pub strict: bool,
    /// Sampling interval in minutes.
    #[arg(long)]
    pub base_interval: Option<u32>,
    /// Treat the whole file as one session.
    #[arg(long)]
    pub include_cross_session: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutArgs {
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub window_length: Option<usize>,
    /// Comma-separated, strictly increasing.
    #[arg(long)]
    pub scales: Option<String>,
    /// power_law, stretched_exp or auto.
    #[arg(long)]
    pub tail_model: Option<String>,
    /// `lo,hi` for the stretched-exponential fit.
    #[arg(long)]
    pub fit_range: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn config_err<T>(r: crate::Result<T>) -> StageResult<T> {
    r.stage("config")
}

fn resolve_format(cfg: &ConfigFile, a: &InputArgs) -> crate::Result<FormatSpec> {
    let d = FormatSpec::default();
    Ok(FormatSpec {
        timestamp_column: cfg
            .pick(a.timestamp_column.clone(), "timestamp_column")?
            .unwrap_or(d.timestamp_column),
        price_column: cfg
            .pick(a.price_column.clone(), "price_column")?
            .unwrap_or(d.price_column),
        timestamp_format: match cfg.pick(a.timestamp_format.clone(), "timestamp_format")? {
            Some(s) => parse_timestamp_format(&s)?,
            None => d.timestamp_format,
        },
        delimiter: match cfg.pick(a.delimiter.clone(), "delimiter")? {
            Some(s) => parse_delimiter(&s)?,
            None => d.delimiter,
        },
        strict: cfg.flag(a.strict, "strict")?,
        base_interval: cfg
            .pick(a.base_interval, "base_interval")?
            .unwrap_or(d.base_interval),
        include_cross_session: cfg.flag(a.include_cross_session, "include_cross_session")?,
    })
}

fn resolve_out(cfg: &ConfigFile, o: &OutArgs) -> crate::Result<PathBuf> {
    cfg.pick(o.out.clone(), "out")?
        .ok_or_else(|| Error::Config("no output directory given (--out)".into()))
}

fn resolve_scales(cfg: &ConfigFile, flag: &Option<String>) -> crate::Result<Vec<usize>> {
    match cfg.pick(flag.clone(), "scales")? {
        Some(s) => parse_scales(&s),
        None => Ok(DEFAULT_SCALES.to_vec()),
    }
}

fn resolve_inputs(cfg: &ConfigFile, a: &InputArgs) -> Vec<PathBuf> {
    if !a.inputs.is_empty() {
        return a.inputs.clone();
    }
    cfg.raw("input")
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(PathBuf::from)
                .collect()
        })
        .unwrap_or_default()
}

fn resolve_run_config(
    cfg: &ConfigFile,
    input: &InputArgs,
    out: &OutArgs,
    analysis: &AnalysisArgs,
) -> crate::Result<RunConfig> {
    let rc = RunConfig {
        inputs: resolve_inputs(cfg, input),
        format: resolve_format(cfg, input)?,
        window_length: cfg
            .pick(analysis.window_length, "window_length")?
            .unwrap_or(DEFAULT_WINDOW_LENGTH),
        scales: resolve_scales(cfg, &analysis.scales)?,
        tail_model: match cfg.pick(analysis.tail_model.clone(), "tail_model")? {
            Some(s) => s.parse::<TailModelChoice>()?,
            None => TailModelChoice::default(),
        },
        fit_range: cfg
            .pick(analysis.fit_range.clone(), "fit_range")?
            .map(|s| parse_range(&s))
            .transpose()?,
        bin_count: cfg.pick(analysis.bins, "bins")?.unwrap_or(DEFAULT_BIN_COUNT),
        out_dir: resolve_out(cfg, out)?,
        seed: cfg.get("seed")?.unwrap_or(0),
    };
    rc.validate()?;
    Ok(rc)
}

/// Runs a command body against a fresh artifact directory, recording failure in the manifest.
fn with_writer<F>(out_dir: &std::path::Path, command: &str, body: F) -> StageResult<()>
where
    F: FnOnce(&mut ArtifactWriter) -> StageResult<()>,
{
    let mut w = ArtifactWriter::create(out_dir, command).stage("output")?;
    match body(&mut w) {
        Ok(()) => {
            w.finish().stage("output")?;
            Ok(())
        }
        Err(e) => {
            if let Err(m) = w.fail(&e.stage, &e.error) {
                log::error!("could not record failure in manifest: {m}");
            }
            Err(e)
        }
    }
}

pub fn run(cli: Cli) -> StageResult<()> {
    let file = match &cli.config {
        Some(p) => config_err(ConfigFile::load(p))?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ingest {
            input,
            out,
            resample,
        } => {
            let rc = config_err(resolve_run_config(&file, &input, &out, &AnalysisArgs::default()))?;
            let n = config_err(file.pick(resample, "resample"))?.unwrap_or(1);
            with_writer(&rc.out_dir, "ingest", |w| {
                commands::cmd_ingest(&rc, n, w).map(|_| ())
            })
        }
        Command::Analyze {
            input,
            out,
            analysis,
        } => {
            let rc = config_err(resolve_run_config(&file, &input, &out, &analysis))?;
            with_writer(&rc.out_dir, "analyze", |w| {
                for s in commands::cmd_analyze(&rc, w)? {
                    print!("{}", commands::render_summary(&s));
                }
                Ok(())
            })
        }
        Command::FitTail {
            input,
            out,
            analysis,
            value_column,
        } => {
            let rc = config_err(resolve_run_config(&file, &input, &out, &analysis))?;
            let column = config_err(file.pick(value_column, "value_column"))?
                .unwrap_or_else(|| "value".to_string());
            with_writer(&rc.out_dir, "fit-tail", |w| {
                for fit in commands::cmd_fit_tail(&rc, &column, w)? {
                    println!("{}", serde_json::to_string(&fit).unwrap_or_default());
                }
                Ok(())
            })
        }
        Command::Predict {
            out,
            model,
            fit,
            z_max,
            points,
            scales,
        } => {
            let out_dir = config_err(resolve_out(&file, &out))?;
            let model = match (config_err(file.pick(model, "model"))?, fit) {
                (_, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::io(&path, e))
                        .stage("config")?;
                    let record: TailFitRecord =
                        config_err(serde_json::from_str(&text).map_err(Error::from))?;
                    config_err(record.to_model())?
                }
                (Some(s), None) => config_err(parse_model(&s))?,
                (None, None) => {
                    return Err(Error::Config("predict needs --model or --fit".into()))
                        .stage("config")
                }
            };
            let z_max = config_err(file.pick(z_max, "z_max"))?;
            let points = config_err(file.pick(points, "points"))?.unwrap_or(201);
            let scales = match config_err(file.pick(scales, "scales"))? {
                Some(s) => config_err(parse_scales(&s))?,
                None => Vec::new(),
            };
            with_writer(&out_dir, "predict", |w| {
                commands::cmd_predict(model, z_max, points, &scales, w).map(|_| ())
            })
        }
        Command::Synth {
            out,
            model,
            window_length,
            total_returns,
            seed,
            initial_price,
        } => {
            let out_dir = config_err(resolve_out(&file, &out))?;
            let model = config_err(file.pick(model, "model"))?
                .ok_or_else(|| Error::Config("synth needs --model".into()))
                .stage("config")?;
            let window_length = config_err(file.pick(window_length, "window_length"))?
                .unwrap_or(DEFAULT_WINDOW_LENGTH);
            let spec = SynthSpec {
                model: config_err(parse_model(&model))?,
                window_length,
                total_returns: config_err(file.pick(total_returns, "total_returns"))?
                    .unwrap_or(window_length * 1000),
                seed: config_err(file.pick(seed, "seed"))?.unwrap_or(0),
                initial_price: config_err(file.pick(initial_price, "initial_price"))?
                    .unwrap_or(100.0),
            };
            config_err(spec.validate())?;
            with_writer(&out_dir, "synth", |w| commands::cmd_synth(&spec, w))
        }
        Command::Collapse { input, out, scales } => {
            let analysis = AnalysisArgs {
                scales,
                ..AnalysisArgs::default()
            };
            let rc = config_err(resolve_run_config(&file, &input, &out, &analysis))?;
            with_writer(&rc.out_dir, "collapse", |w| {
                for r in commands::cmd_collapse(&rc, w)? {
                    println!("collapse_max_distance = {}", r.max_distance);
                }
                Ok(())
            })
        }
    }
}

/// Parses arguments, runs, and maps failures to a nonzero exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StageError { stage, error }) => {
            eprintln!("error: stage `{stage}` failed: {error}");
            ExitCode::from(if stage == "config" { 2 } else { 1 })
        }
    }
}
