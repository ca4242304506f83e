//! Run configuration.
//!
//! Settings come from a flat `key = value` file (`#` starts a comment) and
//! from command-line flags; flags are applied last and win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::calibrate::{FitConfig, UtilityLaw};
use crate::dataio::{ARTICLES_FILE, COUNTRIES_FILE, MEASUREMENTS_FILE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub measurements: Option<PathBuf>,
    pub articles: Option<PathBuf>,
    pub countries_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Abbreviations to restrict to; empty means all.
    pub countries: Vec<String>,
    pub screen_outliers: Vec<String>,
    pub utility: UtilityLaw,
    pub alpha: f64,
    pub fit: FitConfig,
    pub seed: u64,
    pub sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("."),
            measurements: None,
            articles: None,
            countries_file: None,
            out_dir: PathBuf::from("out"),
            countries: Vec::new(),
            screen_outliers: vec!["FRA".into()],
            utility: UtilityLaw::Discounted,
            alpha: 0.05,
            fit: FitConfig::default(),
            seed: 1,
            sigma: 0.01,
        }
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_ascii_uppercase())
        .filter(|s| !s.is_empty())
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let mut cfg = Self::default();
        cfg.apply(&parse_key_values(&text).map_err(|e| e.in_file(path))?)
            .map_err(|e| e.in_file(path))?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = value.into(),
            "measurements" => self.measurements = Some(value.into()),
            "articles" => self.articles = Some(value.into()),
            "countries_file" => self.countries_file = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "countries" => self.countries = list(value),
            "screen_outliers" => self.screen_outliers = list(value),
            "utility" => self.utility = value.parse()?,
            "alpha" => self.alpha = num(key, value)?,
            "tol" => self.fit.tol = num(key, value)?,
            "max_itn" => self.fit.max_itn = num(key, value)?,
            "rtol" => self.fit.integrator.rtol = num(key, value)?,
            "atol" => self.fit.integrator.atol = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, values: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in values {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn measurements_path(&self) -> PathBuf {
        self.measurements
            .clone()
            .unwrap_or_else(|| self.data_dir.join(MEASUREMENTS_FILE))
    }

    pub fn articles_path(&self) -> PathBuf {
        self.articles.clone().unwrap_or_else(|| self.data_dir.join(ARTICLES_FILE))
    }

    pub fn countries_path(&self) -> PathBuf {
        self.countries_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join(COUNTRIES_FILE))
    }

    pub fn screens(&self, abbrev: &str) -> bool {
        self.screen_outliers.iter().any(|s| s.eq_ignore_ascii_case(abbrev))
    }

    pub fn selects(&self, abbrev: &str) -> bool {
        self.countries.is_empty() || self.countries.iter().any(|s| s.eq_ignore_ascii_case(abbrev))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let m = parse_key_values("# header\ntol = 1e-5\n\nutility=step # trailing\ntol = 1e-4\n").unwrap();
        assert_eq!(m["tol"], "1e-4");
        assert_eq!(m["utility"], "step");
        assert!(matches!(parse_key_values("a = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn later_values_win() {
        let mut c = RunConfig::default();
        c.apply(&parse_key_values("max_itn = 10\ncountries = usa, swe").unwrap()).unwrap();
        c.set("max_itn", "20").unwrap();
        assert_eq!(c.fit.max_itn, 20);
        assert_eq!(c.countries, vec!["USA", "SWE"]);
        assert!(c.selects("usa") && !c.selects("FRA"));
        assert!(c.screens("FRA"));
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("tol", "abc").is_err());
    }

    #[test]
    fn default_paths() {
        let c = RunConfig {
            data_dir: "d".into(),
            ..RunConfig::default()
        };
        assert_eq!(c.measurements_path(), Path::new("d/measurements.csv"));
        assert_eq!(c.countries_path(), Path::new("d/countries.csv"));
    }
}
