//! Reference tables shipped with the crate.
//!
//! * `countries.csv` – id, name, abbreviation and individualism index of the
//!   25 countries in the study.
//! * `peak_years.csv` – year of peak cigarette consumption per country.
//! * `reference_fit.csv` – published calibration for the seven gated countries.
//! * `articles_synthetic.csv` – a smooth stand-in for the publication-count
//!   series, shaped to grow slowly before 1960 and accelerate after 1980.
//!   It is synthetic and only meant for simulation and recovery experiments.

use crate::calibrate::{parse_fit_table, FitTable};
use crate::dataio::{parse_articles, parse_countries, ArticleSeries, CountryMeta};
use crate::{Error, Result};

pub const COUNTRIES_CSV: &str = include_str!("../data/countries.csv");
pub const PEAK_YEARS_CSV: &str = include_str!("../data/peak_years.csv");
pub const REFERENCE_FIT_CSV: &str = include_str!("../data/reference_fit.csv");
pub const SYNTHETIC_ARTICLES_CSV: &str = include_str!("../data/articles_synthetic.csv");

/// Abbreviations of the seven countries that pass the regression gate.
pub const GATED: [&str; 7] = ["AUS", "CAN", "FRA", "NZL", "SWE", "GBR", "USA"];

pub fn countries() -> Vec<CountryMeta> {
    parse_countries(COUNTRIES_CSV.as_bytes()).expect("bundled country table is valid")
}

/// `(country_id, t_max)` for every bundled country.
pub fn peak_years() -> Vec<(u32, i32)> {
    parse_peak_years(PEAK_YEARS_CSV.as_bytes()).expect("bundled peak-year table is valid")
}

pub fn parse_peak_years<R: std::io::Read>(input: R) -> Result<Vec<(u32, i32)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("bad {what}"),
        };
        let id = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("country_id"))?;
        let t = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("t_max"))?;
        out.push((id, t));
    }
    Ok(out)
}

pub fn reference_fit() -> FitTable {
    parse_fit_table(REFERENCE_FIT_CSV.as_bytes()).expect("bundled reference fit is valid")
}

pub fn synthetic_articles() -> ArticleSeries {
    parse_articles(SYNTHETIC_ARTICLES_CSV.as_bytes()).expect("bundled article series is valid")
}
