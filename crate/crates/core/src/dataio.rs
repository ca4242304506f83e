//! Ingestion of measurement, article and country-metadata CSV files, and
//! reconstruction of historical prevalence from consumption.
//!
//! File formats (no header unless noted, UTF-8, LF or CRLF):
//!
//! * measurements: `country_id,year,value,kind` with kind `0` = prevalence
//!   fraction, `1` = consumption in grams per person per day;
//! * articles: `year,annual,cumulative`;
//! * countries (with header): `country_id,name,abbrev,idv`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

pub use crate::model::ArticleSeries;
use crate::stats::{grubbs, ols, RegressionResult};
use crate::{Error, Result};

pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const ARTICLES_FILE: &str = "articles.csv";
pub const COUNTRIES_FILE: &str = "countries.csv";

/// Minimum R² for a country's consumption→prevalence map to be trusted.
pub const GATE_MIN_R2: f64 = 0.7;
/// The slope p-value must be strictly below this.
pub const GATE_MAX_P: f64 = 0.001;
pub const GATE_MIN_OBS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Prevalence,
    Consumption,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Prevalence => 0,
            Kind::Consumption => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub country_id: u32,
    pub year: i32,
    pub value: f64,
    pub kind: Kind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryMeta {
    pub country_id: u32,
    pub name: String,
    pub abbrev: String,
    /// Individualism index, 0–100.
    pub idv: u8,
}

fn reader<R: Read>(input: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {name} from {raw:?}"),
    })
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn expect_columns(rec: &csv::StringRecord, n: usize, line: usize) -> Result<()> {
    if rec.len() == n {
        Ok(())
    } else {
        Err(Error::Parse {
            line,
            msg: format!("expected {n} columns, found {}", rec.len()),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Parses the measurement file, preserving row order.
pub fn parse_measurements<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for rec in reader(input, false).records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        expect_columns(&rec, 4, line)?;
        let country_id: u32 = field(&rec, 0, "country_id", line)?;
        let year: i32 = field(&rec, 1, "year", line)?;
        let value: f64 = field(&rec, 2, "value", line)?;
        let code: i64 = field(&rec, 3, "kind", line)?;
        let kind = match code {
            0 => Kind::Prevalence,
            1 => Kind::Consumption,
            other => {
                return Err(Error::Validation {
                    line,
                    msg: format!("kind must be 0 or 1, got {other}"),
                })
            }
        };
        if !value.is_finite() {
            return Err(Error::Validation {
                line,
                msg: "value is not finite".into(),
            });
        }
        match kind {
            Kind::Prevalence if !(0.0..=1.0).contains(&value) => {
                return Err(Error::Validation {
                    line,
                    msg: format!("prevalence {value} outside [0, 1]"),
                })
            }
            Kind::Consumption if value < 0.0 => {
                return Err(Error::Validation {
                    line,
                    msg: format!("consumption {value} is negative"),
                })
            }
            _ => {}
        }
        out.push(Observation {
            country_id,
            year,
            value,
            kind,
        });
    }
    Ok(out)
}

/// Writes observations in the measurement format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_measurements<W: Write>(mut out: W, obs: &[Observation]) -> Result<()> {
    for o in obs {
        writeln!(out, "{},{},{},{}", o.country_id, o.year, o.value, o.kind.code())?;
    }
    Ok(())
}

pub fn parse_articles<R: Read>(input: R) -> Result<ArticleSeries> {
    let (mut years, mut annual, mut cumulative, mut lines) = (vec![], vec![], vec![], vec![]);
    for rec in reader(input, false).records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        expect_columns(&rec, 3, line)?;
        years.push(field::<i32>(&rec, 0, "year", line)?);
        annual.push(field::<u64>(&rec, 1, "annual count", line)?);
        cumulative.push(field::<u64>(&rec, 2, "cumulative count", line)?);
        lines.push(line);
    }
    if years.is_empty() {
        return Err(Error::InvalidArgument("article file is empty".into()));
    }
    ArticleSeries::new(years, annual, cumulative).map_err(|e| match e {
        Error::Validation { line, msg } => Error::Validation {
            line: lines[line - 1],
            msg,
        },
        other => other,
    })
}

pub fn write_articles<W: Write>(mut out: W, series: &ArticleSeries) -> Result<()> {
    for ((y, a), c) in series
        .years()
        .iter()
        .zip(series.annual())
        .zip(series.cumulative())
    {
        writeln!(out, "{y},{a},{c}")?;
    }
    Ok(())
}

pub fn parse_countries<R: Read>(input: R) -> Result<Vec<CountryMeta>> {
    let mut out = Vec::new();
    for rec in reader(input, true).records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        expect_columns(&rec, 4, line)?;
        let country_id = field(&rec, 0, "country_id", line)?;
        let idv: i64 = field(&rec, 3, "idv", line)?;
        if !(0..=100).contains(&idv) {
            return Err(Error::Validation {
                line,
                msg: format!("IDV {idv} outside [0, 100]"),
            });
        }
        out.push(CountryMeta {
            country_id,
            name: rec[1].to_string(),
            abbrev: rec[2].to_string(),
            idv: idv as u8,
        });
    }
    Ok(out)
}

pub fn write_countries<W: Write>(out: W, countries: &[CountryMeta]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country_id", "name", "abbrev", "idv"])?;
    for c in countries {
        w.write_record([
            c.country_id.to_string(),
            c.name.clone(),
            c.abbrev.clone(),
            c.idv.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// All inputs for a run.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub observations: Vec<Observation>,
    pub articles: ArticleSeries,
    pub countries: Vec<CountryMeta>,
}

impl DataBundle {
    /// Loads `measurements.csv`, `articles.csv` and `countries.csv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_files(
            &dir.join(MEASUREMENTS_FILE),
            &dir.join(ARTICLES_FILE),
            &dir.join(COUNTRIES_FILE),
        )
    }

    pub fn load_files(measurements: &Path, articles: &Path, countries: &Path) -> Result<Self> {
        fn read<T>(path: &Path, parse: impl FnOnce(std::fs::File) -> Result<T>) -> Result<T> {
            let f = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
            parse(f).map_err(|e| e.in_file(path))
        }
        Ok(Self {
            observations: read(measurements, parse_measurements)?,
            articles: read(articles, parse_articles)?,
            countries: read(countries, parse_countries)?,
        })
    }

    pub fn country(&self, id: u32) -> Option<&CountryMeta> {
        self.countries.iter().find(|c| c.country_id == id)
    }

    pub fn country_by_abbrev(&self, abbrev: &str) -> Option<&CountryMeta> {
        self.countries
            .iter()
            .find(|c| c.abbrev.eq_ignore_ascii_case(abbrev))
    }

    /// Ids of every country that appears in the metadata or the observations.
    pub fn country_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .countries
            .iter()
            .map(|c| c.country_id)
            .chain(self.observations.iter().map(|o| o.country_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Per-year values of one kind for one country, duplicates averaged, ascending.
pub fn yearly_series(obs: &[Observation], country_id: u32, kind: Kind) -> Vec<(i32, f64)> {
    let mut by_year: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for o in obs.iter().filter(|o| o.country_id == country_id && o.kind == kind) {
        let e = by_year.entry(o.year).or_insert((0.0, 0));
        e.0 += o.value;
        e.1 += 1;
    }
    by_year
        .into_iter()
        .map(|(year, (sum, n))| {
            if n > 1 {
                warn!("country {country_id}: {n} {kind:?} rows for {year}, averaging");
            }
            (year, sum / n as f64)
        })
        .collect()
}

/// Years with both prevalence and consumption for one country.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedSeries {
    pub years: Vec<i32>,
    pub consumption: Vec<f64>,
    pub prevalence: Vec<f64>,
}

impl PairedSeries {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    fn remove(&mut self, idx: usize) {
        self.years.remove(idx);
        self.consumption.remove(idx);
        self.prevalence.remove(idx);
    }
}

pub fn pair_by_year(obs: &[Observation], country_id: u32) -> PairedSeries {
    let cons: BTreeMap<i32, f64> = yearly_series(obs, country_id, Kind::Consumption)
        .into_iter()
        .collect();
    let mut out = PairedSeries::default();
    for (year, x) in yearly_series(obs, country_id, Kind::Prevalence) {
        if let Some(&c) = cons.get(&year) {
            out.years.push(year);
            out.consumption.push(c);
            out.prevalence.push(x);
        }
    }
    out
}

/// A prevalence point dropped by outlier screening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovedOutlier {
    pub year: i32,
    pub prevalence: f64,
    pub p: f64,
}

/// Prevalence reconstructed from consumption via the fitted linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedPrevalence {
    pub country_id: u32,
    /// Years of the consumption record.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `None` when the regression could not be run.
    pub regression: Option<RegressionResult>,
    pub passed_gate: bool,
    pub removed: Option<RemovedOutlier>,
    pub diagnostic: Option<String>,
}

impl EstimatedPrevalence {
    /// Builds an estimate directly from a prevalence series (used for
    /// synthetic fitting data, where no regression is involved).
    pub fn from_series(country_id: u32, times: Vec<f64>, values: Vec<f64>) -> Self {
        Self {
            country_id,
            times,
            values,
            regression: None,
            passed_gate: true,
            removed: None,
            diagnostic: None,
        }
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    /// Years whose estimate falls outside `[0, 1]` (kept, but reported).
    pub fn out_of_range_years(&self) -> Vec<f64> {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| !(0.0..=1.0).contains(*v))
            .map(|(t, _)| *t)
            .collect()
    }

    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|&s| s == t)
            .map(|i| self.values[i])
    }
}

pub fn passes_gate(r: &RegressionResult) -> bool {
    r.r2 >= GATE_MIN_R2 && r.p < GATE_MAX_P && r.n_obs >= GATE_MIN_OBS
}

/// Regresses prevalence on consumption and maps the full consumption record
/// to estimated prevalence.
///
/// With `screen_outliers`, a single Grubbs test at level `alpha` is run on
/// the ratios of observed to fitted prevalence; a flagged point is removed
/// and the regression refitted.
pub fn estimate_prevalence(
    obs: &[Observation],
    country_id: u32,
    screen_outliers: bool,
    alpha: f64,
) -> EstimatedPrevalence {
    let consumption = yearly_series(obs, country_id, Kind::Consumption);
    let mut est = EstimatedPrevalence {
        country_id,
        times: consumption.iter().map(|&(y, _)| f64::from(y)).collect(),
        values: Vec::new(),
        regression: None,
        passed_gate: false,
        removed: None,
        diagnostic: None,
    };
    let mut pairs = pair_by_year(obs, country_id);
    if pairs.len() < 3 {
        est.times.clear();
        est.diagnostic = Some(format!(
            "only {} paired observation(s); regression skipped",
            pairs.len()
        ));
        return est;
    }
    let mut fit = match ols(&pairs.consumption, &pairs.prevalence) {
        Ok(f) => f,
        Err(e) => {
            est.times.clear();
            est.diagnostic = Some(format!("regression skipped: {e}"));
            return est;
        }
    };

    if screen_outliers {
        let ratios: Vec<f64> = pairs
            .consumption
            .iter()
            .zip(&pairs.prevalence)
            .map(|(&c, &x)| x / fit.predict(c))
            .collect();
        match grubbs(&ratios, alpha) {
            Ok(Some(out)) if pairs.len() > 3 => {
                est.removed = Some(RemovedOutlier {
                    year: pairs.years[out.index],
                    prevalence: pairs.prevalence[out.index],
                    p: out.p,
                });
                pairs.remove(out.index);
                match ols(&pairs.consumption, &pairs.prevalence) {
                    Ok(f) => fit = f,
                    Err(e) => {
                        est.times.clear();
                        est.diagnostic = Some(format!("refit after screening failed: {e}"));
                        return est;
                    }
                }
            }
            Ok(_) => {}
            Err(e) => warn!("country {country_id}: outlier screening skipped: {e}"),
        }
    }

    est.values = consumption.iter().map(|&(_, c)| fit.predict(c)).collect();
    est.passed_gate = passes_gate(&fit);
    est.regression = Some(fit);
    est
}

/// Observation counts and windows for one country and kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeriesSummary {
    pub count: usize,
    pub first: Option<i32>,
    pub last: Option<i32>,
}

impl fmt::Display for SeriesSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.first, self.last) {
            (Some(a), Some(b)) => write!(f, "{a}-{b}"),
            _ => f.write_str("-"),
        }
    }
}

pub fn summarize(obs: &[Observation], country_id: u32, kind: Kind) -> SeriesSummary {
    let s = yearly_series(obs, country_id, kind);
    SeriesSummary {
        count: s.len(),
        first: s.first().map(|p| p.0),
        last: s.last().map(|p| p.0),
    }
}
