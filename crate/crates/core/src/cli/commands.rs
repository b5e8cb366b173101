use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::artifacts::ArtifactWriter;
use super::config::{RunConfig, TailModelChoice};
use crate::distribution::{
    collapse_metric, empirical_density, quantile, rescale, CollapseReport, Domain,
    EmpiricalDistribution,
};
use crate::error::{Error, Result};
use crate::ingest::{load_prices, resample, FormatSpec, LoadReport, PriceSeries};
use crate::mixture::{stretched_ln_survival, ScalingFunction, VolatilityModel};
use crate::returns::{log_returns, windowed_volatility, ReturnSeries};
use crate::synth::{generate, SynthSpec};
use crate::tailfit::{fit_power_law, fit_stretched_exponential, tail_ks_distance};

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait InStage<T> {
    fn stage(self, stage: &str) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &str) -> StageResult<T> {
        self.map_err(|error| StageError {
            stage: stage.to_string(),
            error,
        })
    }
}

/// Serialized tail fit: `{model, parameters, fit_range, diagnostics}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFitRecord {
    pub model: String,
    pub parameters: BTreeMap<String, f64>,
    pub fit_range: (f64, f64),
    pub diagnostics: BTreeMap<String, Value>,
}

impl TailFitRecord {
    fn param(&self, key: &str) -> Result<f64> {
        self.parameters
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("tail fit has no `{key}` parameter")))
    }

    /// The volatility model implied by the fit, supported on the fitted tail.
    pub fn to_model(&self) -> Result<VolatilityModel> {
        match self.model.as_str() {
            "power_law" => VolatilityModel::pareto_tail(self.param("alpha")?, self.param("x_min")?),
            "stretched_exp" => VolatilityModel::stretched_exp(
                self.param("lambda")?,
                self.param("beta")?,
                self.fit_range.0,
            ),
            other => Err(Error::Config(format!("unknown tail fit model `{other}`"))),
        }
    }
}

fn power_law_record(samples: &[f64]) -> Result<TailFitRecord> {
    let fit = fit_power_law(samples)?;
    let max = samples.iter().copied().fold(f64::MIN, f64::max);
    Ok(TailFitRecord {
        model: "power_law".into(),
        parameters: BTreeMap::from([("alpha".into(), fit.alpha), ("x_min".into(), fit.x_min)]),
        fit_range: (fit.x_min, max),
        diagnostics: BTreeMap::from([
            ("ks_distance".into(), json!(fit.ks_distance)),
            ("tail_sample_count".into(), json!(fit.tail_sample_count)),
            ("sample_count".into(), json!(samples.len())),
        ]),
    })
}

fn default_stretched_range(sorted: &[f64]) -> (f64, f64) {
    (quantile(sorted, 0.5), quantile(sorted, 0.999))
}

fn stretched_record(
    samples: &[f64],
    dist: &EmpiricalDistribution,
    range: Option<(f64, f64)>,
) -> Result<TailFitRecord> {
    let range = match range {
        Some(r) => r,
        None => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            default_stretched_range(&sorted)
        }
    };
    let fit = fit_stretched_exponential(dist, range)?;
    Ok(TailFitRecord {
        model: "stretched_exp".into(),
        parameters: BTreeMap::from([
            ("amplitude".into(), fit.amplitude),
            ("lambda".into(), fit.lambda),
            ("beta".into(), fit.beta),
        ]),
        fit_range: fit.fit_range,
        diagnostics: BTreeMap::from([
            ("residual".into(), json!(fit.residual)),
            ("sample_count".into(), json!(samples.len())),
        ]),
    })
}

/// KS distance of the stretched-exponential tail conditioned on `σ ≥ lo`.
fn stretched_tail_ks(record: &TailFitRecord, tail_sorted: &[f64], lo: f64) -> Result<f64> {
    let lambda = record.param("lambda")?;
    let beta = record.param("beta")?;
    let ln_s0 = stretched_ln_survival(lambda, beta, lo)?;
    let cdf: Vec<(f64, f64)> = tail_sorted
        .par_iter()
        .map(|&x| Ok((x, 1.0 - (stretched_ln_survival(lambda, beta, x)? - ln_s0).exp())))
        .collect::<Result<_>>()?;
    Ok(tail_ks_distance(tail_sorted, |x| {
        let i = cdf.partition_point(|(v, _)| *v < x);
        cdf[i.min(cdf.len() - 1)].1
    }))
}

/// Fits the chosen tail family. `auto` fits both and keeps the one with the lower
/// KS distance over the power-law tail `σ ≥ x_min`.
pub fn fit_tail(
    samples: &[f64],
    choice: TailModelChoice,
    fit_range: Option<(f64, f64)>,
    bin_count: usize,
) -> Result<TailFitRecord> {
    let dist = || empirical_density(samples, Domain::Absolute, bin_count);
    match choice {
        TailModelChoice::PowerLaw => power_law_record(samples),
        TailModelChoice::StretchedExp => stretched_record(samples, &dist()?, fit_range),
        TailModelChoice::Auto => {
            let pl = power_law_record(samples);
            let se = dist().and_then(|d| stretched_record(samples, &d, fit_range));
            let (mut pl, mut se) = match (pl, se) {
                (Ok(p), Ok(s)) => (p, s),
                (Ok(mut p), Err(e)) => {
                    log::info!("auto tail model: stretched exponential fit failed ({e}); using power law");
                    p.diagnostics.insert("selection".into(), json!(format!("stretched_exp failed: {e}")));
                    return Ok(p);
                }
                (Err(e), Ok(mut s)) => {
                    log::info!("auto tail model: power-law fit failed ({e}); using stretched exponential");
                    s.diagnostics.insert("selection".into(), json!(format!("power_law failed: {e}")));
                    return Ok(s);
                }
                (Err(e), Err(_)) => return Err(e),
            };
            let x_min = pl.param("x_min")?;
            let mut tail: Vec<f64> = samples.iter().copied().filter(|x| *x >= x_min).collect();
            tail.sort_by(f64::total_cmp);
            let ks_pl = pl.diagnostics["ks_distance"].as_f64().unwrap_or(f64::NAN);
            let ks_se = stretched_tail_ks(&se, &tail, x_min)?;
            let pick_pl = !(ks_se < ks_pl);
            log::info!(
                "auto tail model: KS on sigma >= {x_min}: power_law {ks_pl}, stretched_exp {ks_se}; chose {}",
                if pick_pl { "power_law" } else { "stretched_exp" }
            );
            for r in [&mut pl, &mut se] {
                r.diagnostics.insert("selection_rule".into(), json!("min KS over sigma >= power-law x_min"));
                r.diagnostics.insert("shared_range_lo".into(), json!(x_min));
                r.diagnostics.insert("ks_power_law_shared".into(), json!(ks_pl));
                r.diagnostics.insert("ks_stretched_exp_shared".into(), json!(ks_se));
            }
            let (mut chosen, other) = if pick_pl { (pl, se) } else { (se, pl) };
            chosen.diagnostics.insert("alternative".into(), serde_json::to_value(&other)?);
            Ok(chosen)
        }
    }
}

fn write_xy<W: Write>(w: W, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for (x, y) in xs.iter().zip(ys) {
        out.write_record([x.to_string(), y.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn symmetric_grid(half_width: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
        .collect()
}

fn evaluate_grid(scaling: &ScalingFunction, grid: &[f64]) -> Result<Vec<f64>> {
    grid.par_iter().map(|&z| scaling.evaluate(z)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub input: String,
    pub report: LoadReport,
    pub samples: usize,
    pub sessions: usize,
    pub base_interval: u32,
}

fn ingest_one(path: &Path, format: &FormatSpec) -> Result<(PriceSeries, IngestRecord)> {
    let (series, report) = load_prices(path, format)?;
    let record = IngestRecord {
        input: path.display().to_string(),
        report,
        samples: series.len(),
        sessions: series.sessions().len(),
        base_interval: series.base_interval(),
    };
    Ok((series, record))
}

fn prefix_for(path: &Path, multiple: bool) -> String {
    if multiple {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
        format!("{stem}/")
    } else {
        String::new()
    }
}

fn require_inputs(cfg: &RunConfig) -> StageResult<()> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no input file given (--input)".into())).stage("config");
    }
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig, resample_n: usize, w: &mut ArtifactWriter) -> StageResult<Vec<IngestRecord>> {
    require_inputs(cfg)?;
    let multiple = cfg.inputs.len() > 1;
    let mut records = Vec::new();
    for path in &cfg.inputs {
        let prefix = prefix_for(path, multiple);
        let (mut series, record) = ingest_one(path, &cfg.format).stage("ingest")?;
        if resample_n > 1 {
            series = resample(&series, resample_n).stage("resample")?;
        }
        w.write_with(&format!("{prefix}prices.csv"), "ingest", |f| series.write_csv(f))
            .stage("ingest")?;
        w.write_json(&format!("{prefix}ingest.json"), "ingest", &record)
            .stage("ingest")?;
        records.push(record);
    }
    Ok(records)
}

/// Headline numbers of one analysis; `summary.txt` is rendered from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub input: String,
    pub price_samples: usize,
    pub sessions: usize,
    pub base_returns: usize,
    pub window_length: usize,
    pub windows: usize,
    pub median_volatility: f64,
    pub tail_model: String,
    pub tail_parameters: BTreeMap<String, f64>,
    pub tail_fit_range: (f64, f64),
    pub scales: Vec<usize>,
    pub collapse_max_distance: f64,
    pub predicted_mass: f64,
}

pub fn render_summary(s: &AnalyzeSummary) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("input", s.input.clone());
    line("price_samples", s.price_samples.to_string());
    line("sessions", s.sessions.to_string());
    line("base_returns", s.base_returns.to_string());
    line("window_length", s.window_length.to_string());
    line("windows", s.windows.to_string());
    line("median_volatility", s.median_volatility.to_string());
    line("tail_model", s.tail_model.clone());
    for (k, v) in &s.tail_parameters {
        line(&format!("tail.{k}"), v.to_string());
    }
    line("tail_fit_range.lo", s.tail_fit_range.0.to_string());
    line("tail_fit_range.hi", s.tail_fit_range.1.to_string());
    line(
        "scales",
        s.scales.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
    );
    line("collapse_max_distance", s.collapse_max_distance.to_string());
    line("predicted_mass", s.predicted_mass.to_string());
    out
}

struct ScaleAnalysis {
    returns: ReturnSeries,
    unscaled: EmpiricalDistribution,
    rescaled: EmpiricalDistribution,
    max_abs_z: f64,
}

fn analyze_scale(series: &PriceSeries, n: usize, bins: usize) -> Result<ScaleAnalysis> {
    let returns = log_returns(series, n)?;
    let unscaled = empirical_density(&returns.values, Domain::Signed, bins)?;
    let z = rescale(&returns.values, n)?;
    let rescaled = empirical_density(&z, Domain::Signed, bins)?;
    let max_abs_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ScaleAnalysis {
        returns,
        unscaled,
        rescaled,
        max_abs_z,
    })
}

fn analyze_one(
    cfg: &RunConfig,
    path: &Path,
    prefix: &str,
    w: &mut ArtifactWriter,
) -> StageResult<AnalyzeSummary> {
    let (series, record) = ingest_one(path, &cfg.format).stage("ingest")?;
    w.write_json(&format!("{prefix}ingest.json"), "ingest", &record)
        .stage("ingest")?;

    let base = log_returns(&series, 1).stage("returns")?;
    let per_scale: Vec<ScaleAnalysis> = cfg
        .scales
        .par_iter()
        .map(|&n| analyze_scale(&series, n, cfg.bin_count))
        .collect::<Result<_>>()
        .stage("returns")?;
    for s in &per_scale {
        let n = s.returns.n;
        w.write_with(&format!("{prefix}returns_n{n}_unscaled.csv"), "returns", |f| {
            s.unscaled.write_csv(f)
        })
        .stage("returns")?;
        w.write_with(&format!("{prefix}returns_n{n}_rescaled.csv"), "returns", |f| {
            s.rescaled.write_csv(f)
        })
        .stage("returns")?;
    }

    let vol = windowed_volatility(&base, cfg.window_length).stage("volatility")?;
    let vol_dist =
        empirical_density(&vol.sigmas, Domain::Absolute, cfg.bin_count).stage("volatility")?;
    w.write_with(&format!("{prefix}volatility.csv"), "volatility", |f| vol.write_csv(f))
        .stage("volatility")?;
    w.write_with(
        &format!("{prefix}volatility_distribution.csv"),
        "volatility",
        |f| vol_dist.write_csv(f),
    )
    .stage("volatility")?;

    let fit = fit_tail(&vol.sigmas, cfg.tail_model, cfg.fit_range, cfg.bin_count).stage("tail_fit")?;
    w.write_json(&format!("{prefix}tail_fit.json"), "tail_fit", &fit)
        .stage("tail_fit")?;

    let model = VolatilityModel::from_histogram(&vol_dist).stage("predict")?;
    let scaling = ScalingFunction::new(model);
    let z_max = per_scale.iter().fold(0.0f64, |m, s| m.max(s.max_abs_z));
    let grid = symmetric_grid(z_max, 201);
    let density = evaluate_grid(&scaling, &grid).stage("predict")?;
    w.write_with(
        &format!("{prefix}predicted_scaling_function.csv"),
        "predict",
        |f| write_xy(f, ["z", "density"], &grid, &density),
    )
    .stage("predict")?;
    let predicted_mass = scaling
        .total_mass(&crate::quadrature::QuadratureOptions::default().with_rel_tol(1e-8))
        .stage("predict")?;

    let series_list: Vec<ReturnSeries> = per_scale.into_iter().map(|s| s.returns).collect();
    let collapse = collapse_metric(&series_list).stage("collapse")?;
    write_collapse(w, prefix, &collapse)?;

    let mut sorted = vol.sigmas.clone();
    sorted.sort_by(f64::total_cmp);
    let summary = AnalyzeSummary {
        input: record.input,
        price_samples: record.samples,
        sessions: record.sessions,
        base_returns: base.len(),
        window_length: cfg.window_length,
        windows: vol.len(),
        median_volatility: quantile(&sorted, 0.5),
        tail_model: fit.model.clone(),
        tail_parameters: fit.parameters.clone(),
        tail_fit_range: fit.fit_range,
        scales: cfg.scales.clone(),
        collapse_max_distance: collapse.max_distance,
        predicted_mass,
    };
    w.write_json(&format!("{prefix}summary.json"), "summary", &summary)
        .stage("summary")?;
    w.write_text(&format!("{prefix}summary.txt"), "summary", &render_summary(&summary))
        .stage("summary")?;
    Ok(summary)
}

fn write_collapse(w: &mut ArtifactWriter, prefix: &str, collapse: &CollapseReport) -> StageResult<()> {
    w.write_with(&format!("{prefix}collapse.csv"), "collapse", |f| collapse.write_csv(f))
        .stage("collapse")?;
    w.write_json(&format!("{prefix}collapse.json"), "collapse", collapse)
        .stage("collapse")?;
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig, w: &mut ArtifactWriter) -> StageResult<Vec<AnalyzeSummary>> {
    require_inputs(cfg)?;
    let multiple = cfg.inputs.len() > 1;
    cfg.inputs
        .iter()
        .map(|path| analyze_one(cfg, path, &prefix_for(path, multiple), w))
        .collect()
}

pub fn cmd_collapse(cfg: &RunConfig, w: &mut ArtifactWriter) -> StageResult<Vec<CollapseReport>> {
    require_inputs(cfg)?;
    let multiple = cfg.inputs.len() > 1;
    let mut reports = Vec::new();
    for path in &cfg.inputs {
        let prefix = prefix_for(path, multiple);
        let (series, _) = ingest_one(path, &cfg.format).stage("ingest")?;
        let list: Vec<ReturnSeries> = cfg
            .scales
            .par_iter()
            .map(|&n| log_returns(&series, n))
            .collect::<Result<_>>()
            .stage("returns")?;
        let report = collapse_metric(&list).stage("collapse")?;
        write_collapse(w, &prefix, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Fits a tail to the `value_column` of each input (e.g. a `volatility.csv`).
pub fn cmd_fit_tail(cfg: &RunConfig, value_column: &str, w: &mut ArtifactWriter) -> StageResult<Vec<TailFitRecord>> {
    require_inputs(cfg)?;
    let multiple = cfg.inputs.len() > 1;
    let format = FormatSpec {
        price_column: value_column.to_string(),
        ..cfg.format.clone()
    };
    let mut out = Vec::new();
    for path in &cfg.inputs {
        let prefix = prefix_for(path, multiple);
        let (series, _) = load_prices(path, &format).stage("ingest")?;
        let fit = fit_tail(series.prices(), cfg.tail_model, cfg.fit_range, cfg.bin_count)
            .stage("tail_fit")?;
        w.write_json(&format!("{prefix}tail_fit.json"), "tail_fit", &fit)
            .stage("tail_fit")?;
        out.push(fit);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRecord {
    pub model: VolatilityModel,
    pub z_max: f64,
    pub points: usize,
    pub total_mass: f64,
    pub scales: Vec<usize>,
}

pub fn cmd_predict(
    model: VolatilityModel,
    z_max: Option<f64>,
    points: usize,
    scales: &[usize],
    w: &mut ArtifactWriter,
) -> StageResult<PredictRecord> {
    let z_max = z_max.unwrap_or(8.0 * model.scale());
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err(Error::Config(format!("z range must be positive, got {z_max}"))).stage("config");
    }
    let scaling = ScalingFunction::new(model.clone());
    let grid = symmetric_grid(z_max, points);
    let density = evaluate_grid(&scaling, &grid).stage("predict")?;
    w.write_with("scaling_function.csv", "predict", |f| {
        write_xy(f, ["z", "density"], &grid, &density)
    })
    .stage("predict")?;
    for &n in scales {
        let root = (n as f64).sqrt();
        let r: Vec<f64> = grid.iter().map(|z| z * root).collect();
        let d: Vec<f64> = density.iter().map(|v| v / root).collect();
        w.write_with(&format!("predicted_n{n}.csv"), "predict", |f| {
            write_xy(f, ["r", "density"], &r, &d)
        })
        .stage("predict")?;
    }
    let total_mass = scaling
        .total_mass(&crate::quadrature::QuadratureOptions::default().with_rel_tol(1e-8))
        .stage("predict")?;
    let record = PredictRecord {
        model,
        z_max,
        points: grid.len(),
        total_mass,
        scales: scales.to_vec(),
    };
    w.write_json("prediction.json", "predict", &record)
        .stage("predict")?;
    Ok(record)
}

pub fn cmd_synth(spec: &SynthSpec, w: &mut ArtifactWriter) -> StageResult<()> {
    spec.validate().stage("config")?;
    let (prices, truth) = generate(spec).stage("synth")?;
    w.write_with("prices.csv", "synth", |f| prices.write_csv(f))
        .stage("synth")?;
    w.write_with("true_volatility.csv", "synth", |f| truth.write_csv(f))
        .stage("synth")?;
    w.write_json("true_params.json", "synth", spec).stage("synth")?;
    Ok(())
}
