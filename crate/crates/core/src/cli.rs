//! Subcommand implementations behind the `contagion` binary.
//!
//! Each command reads its inputs through a [`RunConfig`], writes files into
//! the output directory and a short human-readable report to `out`. Per
//! country work is merged in `country_id` order so outputs are deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    analyses_from_table, compare_utility_models, consumption_peak, correlation_study, peak_records,
    write_peak_table, write_study, Pairing, PeakRecord, StudyReport,
};
use crate::bundled;
use crate::calibrate::{alternate_fit, parse_fit_table, write_fit_table, FitResult, FitTable, UtilityLaw};
use crate::config::RunConfig;
use crate::dataio::{
    estimate_prevalence, write_articles, write_countries, write_measurements, CountryMeta, DataBundle,
    EstimatedPrevalence, Kind,
};
use crate::integrator::{integrate, IntegratorConfig};
use crate::model::{ArticleSeries, CountryParams, UniversalParams};
use crate::plot::{scatter_with_fit, Chart, Series};
use crate::synth::SynthSpec;
use crate::{Error, Result};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).in_file(path))
}

fn csv_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_file(path, buf)
}

pub fn load_bundle(cfg: &RunConfig) -> Result<DataBundle> {
    DataBundle::load_files(&cfg.measurements_path(), &cfg.articles_path(), &cfg.countries_path())
}

/// Countries of the bundle that pass the `--countries` filter, in id order.
fn selected(cfg: &RunConfig, bundle: &DataBundle) -> Result<Vec<CountryMeta>> {
    for c in &cfg.countries {
        if bundle.country_by_abbrev(c).is_none() {
            return Err(Error::MissingCountry(c.clone()));
        }
    }
    let mut out: Vec<CountryMeta> = bundle
        .countries
        .iter()
        .filter(|m| cfg.selects(&m.abbrev))
        .cloned()
        .collect();
    out.sort_by_key(|m| m.country_id);
    Ok(out)
}

fn label_for(meta: &[CountryMeta]) -> impl Fn(u32) -> String + '_ {
    move |id| {
        meta.iter()
            .find(|m| m.country_id == id)
            .map_or_else(|| id.to_string(), |m| m.abbrev.clone())
    }
}

/// Validates all inputs and prints per-country observation counts.
pub fn ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let meta = selected(cfg, &bundle)?;
    writeln!(out, "{:>3}  {:<24} {:<6} {:>8} {:>8}", "No.", "Country", "Abbr", "x(t)", "c(t)")?;
    for m in &meta {
        let count = |kind| {
            bundle
                .observations
                .iter()
                .filter(|o| o.country_id == m.country_id && o.kind == kind)
                .count()
        };
        writeln!(
            out,
            "{:>3}  {:<24} {:<6} {:>8} {:>8}",
            m.country_id,
            m.name,
            m.abbrev,
            count(Kind::Prevalence),
            count(Kind::Consumption)
        )?;
    }
    let unknown: Vec<u32> = bundle
        .country_ids()
        .into_iter()
        .filter(|id| bundle.country(*id).is_none())
        .collect();
    if !unknown.is_empty() {
        writeln!(out, "observations for countries without metadata: {unknown:?}")?;
    }
    let years = bundle.articles.years();
    writeln!(
        out,
        "articles: {} years ({}-{}), {} in total",
        years.len(),
        years.first().copied().unwrap_or_default(),
        years.last().copied().unwrap_or_default(),
        bundle.articles.cumulative().last().copied().unwrap_or_default()
    )?;
    Ok(())
}

fn estimates_for(cfg: &RunConfig, bundle: &DataBundle, meta: &[CountryMeta]) -> Vec<EstimatedPrevalence> {
    meta.par_iter()
        .map(|m| estimate_prevalence(&bundle.observations, m.country_id, cfg.screens(&m.abbrev), cfg.alpha))
        .collect()
}

pub const REGRESSION_HEADER: [&str; 11] = [
    "country", "C", "ci95_C", "B", "ci95_B", "R2", "p", "n_obs", "gate", "removed_year", "removed_p",
];

fn write_regressions<W: Write>(out: W, meta: &[CountryMeta], est: &[EstimatedPrevalence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REGRESSION_HEADER)?;
    for (m, e) in meta.iter().zip(est) {
        let mut row = vec![m.abbrev.clone()];
        match &e.regression {
            Some(r) => row.extend([
                format!("{:.6}", r.slope),
                format!("{:.6}", r.ci95_slope),
                format!("{:.6}", r.intercept),
                format!("{:.6}", r.ci95_intercept),
                format!("{:.4}", r.r2),
                format!("{:.3e}", r.p),
                r.n_obs.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n("-".to_string(), 7)),
        }
        row.push(e.passed_gate.to_string());
        match &e.removed {
            Some(o) => row.extend([o.year.to_string(), format!("{:.4}", o.p)]),
            None => row.extend(["-".to_string(), "-".to_string()]),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_series<W: Write>(out: W, header: [&str; 2], times: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for (t, v) in times.iter().zip(values) {
        w.write_record([format!("{t}"), format!("{v:.8}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Regresses prevalence on consumption for each selected country.
pub fn estimate(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<EstimatedPrevalence>> {
    let bundle = load_bundle(cfg)?;
    let meta = selected(cfg, &bundle)?;
    let est = estimates_for(cfg, &bundle, &meta);
    create_dir(&cfg.out_dir)?;
    csv_file(&cfg.out_dir.join("regression.csv"), |b| write_regressions(b, &meta, &est))?;
    let xdir = cfg.out_dir.join("xhat");
    create_dir(&xdir)?;
    for (m, e) in meta.iter().zip(&est) {
        if let Some(d) = &e.diagnostic {
            writeln!(out, "{}: {d}", m.abbrev)?;
        }
        if let Some(o) = &e.removed {
            writeln!(out, "{}: removed prevalence point {} (p = {:.4})", m.abbrev, o.year, o.p)?;
        }
        let bad = e.out_of_range_years();
        if !bad.is_empty() {
            warn!("{}: estimate outside [0, 1] in {} year(s)", m.abbrev, bad.len());
        }
        if !e.times.is_empty() {
            csv_file(&xdir.join(format!("{}.csv", m.abbrev)), |b| {
                write_series(b, ["year", "xhat"], &e.times, &e.values)
            })?;
        }
    }
    let gated: Vec<&str> = meta
        .iter()
        .zip(&est)
        .filter(|(_, e)| e.passed_gate)
        .map(|(m, _)| m.abbrev.as_str())
        .collect();
    writeln!(out, "passed gate: {}", gated.join(", "))?;
    Ok(est)
}

#[derive(Serialize)]
struct FitManifest<'a> {
    law: UtilityLaw,
    countries: Vec<String>,
    tol: f64,
    max_itn: usize,
    rtol: f64,
    atol: f64,
    result: &'a FitResult,
}

fn curve_chart(
    title: &str,
    local: &CountryParams,
    universal: &UniversalParams,
    law: UtilityLaw,
    articles: &Arc<ArticleSeries>,
    times: &[f64],
    overlay: Option<&EstimatedPrevalence>,
) -> Result<String> {
    let u = law.model(local, universal, articles);
    let traj = integrate(local, universal, &u, times, &IntegratorConfig::default())?;
    let mut chart = Chart::new(title, "year", "prevalence").with(Series::line(
        "model",
        traj.iter().collect(),
    ));
    if let Some(e) = overlay {
        chart = chart.with(Series::markers(
            "estimated",
            e.times.iter().copied().zip(e.values.iter().copied()).collect(),
        ));
    }
    Ok(chart.render())
}

fn gated_estimates(cfg: &RunConfig, bundle: &DataBundle) -> Result<(Vec<CountryMeta>, Vec<EstimatedPrevalence>)> {
    let meta = selected(cfg, bundle)?;
    let est = estimates_for(cfg, bundle, &meta);
    let (m, e): (Vec<_>, Vec<_>) = meta.into_iter().zip(est).filter(|(_, e)| e.passed_gate).unzip();
    if e.is_empty() {
        return Err(Error::InvalidArgument("no selected country passes the regression gate".into()));
    }
    Ok((m, e))
}

/// Calibrates the gated countries and writes the fit table, manifest and plots.
pub fn fit(cfg: &RunConfig, out: &mut dyn Write) -> Result<FitResult> {
    let bundle = load_bundle(cfg)?;
    let (meta, est) = gated_estimates(cfg, &bundle)?;
    let articles = Arc::new(bundle.articles.clone());
    info!("fitting {} countries with {} utility", meta.len(), cfg.utility);
    let result = alternate_fit(&est, cfg.utility, &articles, &cfg.fit)?;
    write_fit_outputs(cfg, &meta, &est, &articles, &result)?;
    writeln!(
        out,
        "{} utility: E = {:.6}, b = {:.4}, delta = {:.6}, {} iterations ({:?})",
        cfg.utility, result.total_error, result.universal.b, result.universal.delta, result.outer_iterations, result.converged_by
    )?;
    for n in &result.notes {
        writeln!(out, "note: {n}")?;
    }
    Ok(result)
}

fn write_fit_outputs(
    cfg: &RunConfig,
    meta: &[CountryMeta],
    est: &[EstimatedPrevalence],
    articles: &Arc<ArticleSeries>,
    result: &FitResult,
) -> Result<()> {
    create_dir(&cfg.out_dir)?;
    let label = label_for(meta);
    csv_file(&cfg.out_dir.join("fit.csv"), |b| write_fit_table(b, result, &label))?;
    let manifest = FitManifest {
        law: result.law,
        countries: meta.iter().map(|m| m.abbrev.clone()).collect(),
        tol: cfg.fit.tol,
        max_itn: cfg.fit.max_itn,
        rtol: cfg.fit.integrator.rtol,
        atol: cfg.fit.integrator.atol,
        result,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_file(&cfg.out_dir.join("fit.json"), json + "\n")?;
    let pdir = cfg.out_dir.join("curves");
    create_dir(&pdir)?;
    for (m, e) in meta.iter().zip(est) {
        let Some(t0) = e.first_time() else { continue };
        let local = CountryParams {
            t0,
            ..result.locals[&m.country_id]
        };
        let svg = curve_chart(&m.name, &local, &result.universal, result.law, articles, &e.times, Some(e))?;
        write_file(&pdir.join(format!("{}.svg", m.abbrev)), svg)?;
    }
    Ok(())
}

/// Where `simulate` takes its parameters from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource {
    Explicit {
        local: CountryParams,
        universal: UniversalParams,
    },
    /// A fit table on disk, or the bundled reference fit when `None`.
    FitTable {
        path: Option<PathBuf>,
        country: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub source: ParamSource,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

/// Article series for simulation: the configured file when it exists,
/// otherwise the bundled synthetic series.
fn simulation_articles(cfg: &RunConfig) -> Result<ArticleSeries> {
    let path = cfg.articles_path();
    if path.exists() {
        let f = fs::File::open(&path).map_err(|e| Error::from(e).in_file(&path))?;
        return crate::dataio::parse_articles(f).map_err(|e| e.in_file(&path));
    }
    warn!("{} not found, using the bundled synthetic article series", path.display());
    Ok(bundled::synthetic_articles())
}

/// Forward-simulates one parameter set and writes a trajectory CSV and SVG.
pub fn simulate(cfg: &RunConfig, args: &SimulateArgs, out: &mut dyn Write) -> Result<Vec<(f64, f64)>> {
    if !(args.step > 0.0) || args.to <= args.from {
        return Err(Error::InvalidArgument("simulation needs from < to and a positive step".into()));
    }
    let (mut local, universal, label) = match &args.source {
        ParamSource::Explicit { local, universal } => (*local, *universal, "custom".to_string()),
        ParamSource::FitTable { path, country } => {
            let table = match path {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| Error::from(e).in_file(p))?;
                    parse_fit_table(f).map_err(|e| e.in_file(p))?
                }
                None => bundled::reference_fit(),
            };
            let row = table
                .row(country)
                .ok_or_else(|| Error::MissingCountry(country.clone()))?;
            let uni = table
                .universal
                .ok_or_else(|| Error::InvalidArgument("fit table has no universal row".into()))?;
            (row.params, uni, row.country.clone())
        }
    };
    local.t0 = args.from;
    let law = if local.t_star.is_some() {
        UtilityLaw::Step
    } else {
        cfg.utility
    };
    let articles = Arc::new(simulation_articles(cfg)?);
    let n = ((args.to - args.from) / args.step).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| args.from + k as f64 * args.step).collect();
    let u = law.model(&local, &universal, &articles);
    let traj = integrate(&local, &universal, &u, &times, &IntegratorConfig::default())?;

    // overlay the estimate when data for this country is available
    let overlay = load_bundle(cfg).ok().and_then(|b| {
        let m = b.country_by_abbrev(&label)?.clone();
        let e = estimate_prevalence(&b.observations, m.country_id, cfg.screens(&m.abbrev), cfg.alpha);
        (!e.times.is_empty()).then_some(e)
    });

    create_dir(&cfg.out_dir)?;
    csv_file(&cfg.out_dir.join(format!("simulate_{label}.csv")), |b| {
        write_series(b, ["year", "x"], &traj.times, &traj.values)
    })?;
    let svg = curve_chart(&label, &local, &universal, law, &articles, &times, overlay.as_ref())?;
    write_file(&cfg.out_dir.join(format!("simulate_{label}.svg")), svg)?;
    let (tp, xp) = traj
        .iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |b, (t, x)| if x > b.1 { (t, x) } else { b });
    writeln!(out, "{label}: peak x = {xp:.4} at {tp}")?;
    Ok(traj.iter().collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyzeArgs {
    pub tables_only: bool,
    /// Use this fit table instead of fitting.
    pub fit_table: Option<PathBuf>,
    /// Also fit every utility law and report their errors.
    pub compare_laws: bool,
}

/// Peak years recomputed from consumption where available, bundled otherwise.
fn data_peaks(bundle: &DataBundle) -> Vec<(u32, i32)> {
    let bundled_peaks = bundled::peak_years();
    bundle
        .countries
        .iter()
        .filter_map(|m| {
            consumption_peak(&bundle.observations, m.country_id)
                .ok()
                .or_else(|| bundled_peaks.iter().find(|(id, _)| *id == m.country_id).map(|p| p.1))
                .map(|t| (m.country_id, t))
        })
        .collect()
}

/// Correlation study; writes the correlation table, peak-year table and plots.
pub fn analyze(cfg: &RunConfig, args: &AnalyzeArgs, out: &mut dyn Write) -> Result<StudyReport> {
    let (meta, peaks, table, est, comparison) = if args.tables_only {
        let meta = bundled::countries();
        (meta, bundled::peak_years(), bundled::reference_fit(), Vec::new(), BTreeMap::new())
    } else {
        let bundle = load_bundle(cfg)?;
        let (gmeta, est) = gated_estimates(cfg, &bundle)?;
        let articles = Arc::new(bundle.articles.clone());
        let table = match &args.fit_table {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| Error::from(e).in_file(p))?;
                parse_fit_table(f).map_err(|e| e.in_file(p))?
            }
            None => FitTable::from_result(&alternate_fit(&est, cfg.utility, &articles, &cfg.fit)?, label_for(&gmeta)),
        };
        let comparison = if args.compare_laws {
            compare_utility_models(&est, &articles, &cfg.fit, true)?
                .into_iter()
                .map(|(law, r)| (law, r.total_error))
                .collect()
        } else {
            BTreeMap::new()
        };
        let peaks = data_peaks(&bundle);
        (bundle.countries.clone(), peaks, table, est, comparison)
    };
    let analyses: Vec<_> = analyses_from_table(&table, &meta, &peaks, &est)?
        .into_iter()
        .filter(|c| cfg.selects(&c.abbrev))
        .collect();
    let full: Vec<PeakRecord> = peak_records(&meta, &peaks)
        .into_iter()
        .filter(|r| cfg.selects(&r.abbrev))
        .collect();
    let mut report = correlation_study(&analyses, &full)?;
    report.model_comparison = comparison;

    create_dir(&cfg.out_dir)?;
    csv_file(&cfg.out_dir.join("correlations.csv"), |b| write_study(b, &report))?;
    csv_file(&cfg.out_dir.join("peak_years.csv"), |b| write_peak_table(b, &full))?;
    if !report.model_comparison.is_empty() {
        csv_file(&cfg.out_dir.join("model_comparison.csv"), |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["utility", "E"])?;
            for (law, e) in &report.model_comparison {
                w.write_record([law.name().to_string(), format!("{e:.6}")])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }

    let labels: Vec<String> = analyses.iter().map(|c| c.abbrev.clone()).collect();
    let idv: Vec<f64> = analyses.iter().map(|c| f64::from(c.idv.unwrap_or_default())).collect();
    let a: Vec<f64> = analyses.iter().map(|c| c.a).collect();
    let peak: Vec<f64> = analyses.iter().map(|c| f64::from(c.t_max)).collect();
    let zip = |x: &[f64], y: &[f64]| -> Vec<(f64, f64)> { x.iter().copied().zip(y.iter().copied()).collect() };
    write_file(
        &cfg.out_dir.join("idv_a.svg"),
        scatter_with_fit("a versus IDV", "IDV", "a", &zip(&idv, &a), &labels),
    )?;
    write_file(
        &cfg.out_dir.join("a_tmax.svg"),
        scatter_with_fit("t_max versus a", "a", "t_max", &zip(&a, &peak), &labels),
    )?;
    let full_pts: Vec<(f64, f64)> = full
        .iter()
        .map(|r| (f64::from(r.idv.unwrap_or_default()), f64::from(r.t_max)))
        .collect();
    let full_labels: Vec<String> = full.iter().map(|r| r.abbrev.clone()).collect();
    write_file(
        &cfg.out_dir.join("idv_tmax.svg"),
        scatter_with_fit("t_max versus IDV", "IDV", "t_max", &full_pts, &full_labels),
    )?;
    if let Some(sx) = analyses.iter().map(|c| c.s_x).collect::<Option<Vec<f64>>>() {
        write_file(
            &cfg.out_dir.join("idv_sx.svg"),
            scatter_with_fit("s_x versus IDV", "IDV", "s_x", &zip(&idv, &sx), &labels),
        )?;
        write_file(
            &cfg.out_dir.join("a_sx.svg"),
            scatter_with_fit("s_x versus a", "a", "s_x", &zip(&a, &sx), &labels),
        )?;
    }

    for e in &report.entries {
        let (rr, rp) = e.pairing.reference();
        match e.result {
            Some(r) => writeln!(
                out,
                "{:<14} n={:<3} rho={:>7.4} p={:.4}  (reference {rr} ({rp}))",
                e.pairing, r.n, r.rho, r.p
            )?,
            None => writeln!(out, "{:<14} unavailable", e.pairing)?,
        }
    }
    for (law, e) in &report.model_comparison {
        writeln!(out, "E[{law}] = {e:.6}")?;
    }
    for n in &report.notes {
        writeln!(out, "note: {n}")?;
    }
    if args.tables_only && report.get(Pairing::ASlope).is_none() {
        writeln!(out, "note: s_x pairings need estimated prevalence and are skipped in tables-only mode")?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthArgs {
    /// Generate the single recovery-test country instead of seven.
    pub single: bool,
}

/// Writes a synthetic data directory plus a `truth.json` manifest.
pub fn synth(cfg: &RunConfig, args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let mut spec = if args.single {
        SynthSpec::single(cfg.sigma, cfg.seed)
    } else {
        SynthSpec::seven_country(cfg.sigma, cfg.seed)
    };
    spec.countries.retain(|c| cfg.selects(&c.abbrev));
    if spec.countries.is_empty() {
        return Err(Error::InvalidArgument("country filter leaves no synthetic country".into()));
    }
    spec.law = cfg.utility;
    let articles = Arc::new(bundled::synthetic_articles());
    let obs = spec.observations(&articles)?;
    create_dir(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    csv_file(&dir.join(crate::dataio::MEASUREMENTS_FILE), |b| write_measurements(b, &obs))?;
    csv_file(&dir.join(crate::dataio::ARTICLES_FILE), |b| write_articles(b, &articles))?;
    let meta = spec.metadata(&bundled::countries());
    csv_file(&dir.join(crate::dataio::COUNTRIES_FILE), |b| write_countries(b, &meta))?;
    let json = serde_json::to_string_pretty(&spec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_file(&dir.join("truth.json"), json + "\n")?;
    writeln!(
        out,
        "wrote {} observations for {} countries (sigma = {}, seed = {}) to {}",
        obs.len(),
        spec.countries.len(),
        spec.sigma,
        spec.seed,
        dir.display()
    )?;
    Ok(())
}
