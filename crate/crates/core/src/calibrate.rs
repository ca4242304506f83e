//! Alternating least-squares calibration.
//!
//! Each outer iteration first refits every country's local parameters
//! `(x0, a, u0, u_inf)` with the universal `(b, delta)` held fixed, then
//! refits the universal parameters against the concatenated residuals of all
//! countries with the locals held fixed. Iteration stops when the total
//! squared error changes by less than `tol` or after `max_itn` iterations.
//!
//! `delta` is optimised internally as `ln(1 - delta)`, which spreads the
//! interesting range `delta ∈ [0.99, 1)` over a well-scaled interval.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::EstimatedPrevalence;
use crate::integrator::{integrate, IntegratorConfig};
use crate::lm::{minimize, LmConfig, LmStatus};
use crate::model::{ArticleSeries, CountryParams, UniversalParams, UtilityModel};
use crate::{Error, Result};

/// Smallest `1 - delta` the solver may reach.
const MIN_DELTA_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityLaw {
    Discounted,
    Constant,
    Step,
}

impl UtilityLaw {
    pub const ALL: [UtilityLaw; 3] = [UtilityLaw::Discounted, UtilityLaw::Constant, UtilityLaw::Step];

    pub fn name(self) -> &'static str {
        match self {
            UtilityLaw::Discounted => "discounted",
            UtilityLaw::Constant => "constant",
            UtilityLaw::Step => "step",
        }
    }

    /// Builds the utility model for one country.
    pub fn model(
        self,
        local: &CountryParams,
        universal: &UniversalParams,
        articles: &Arc<ArticleSeries>,
    ) -> UtilityModel {
        match self {
            UtilityLaw::Discounted => UtilityModel::Discounted {
                u0: local.u0,
                u_inf: local.u_inf,
                delta: universal.delta,
                articles: Arc::clone(articles),
            },
            UtilityLaw::Constant => UtilityModel::Constant { u: local.u0 },
            UtilityLaw::Step => UtilityModel::Step {
                u0: local.u0,
                u_inf: local.u_inf,
                t_star: local.t_star.unwrap_or(f64::INFINITY),
            },
        }
    }

    fn fits_delta(self) -> bool {
        self == UtilityLaw::Discounted
    }
}

impl fmt::Display for UtilityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "discounted" => Ok(UtilityLaw::Discounted),
            "constant" => Ok(UtilityLaw::Constant),
            "step" => Ok(UtilityLaw::Step),
            other => Err(Error::InvalidArgument(format!("unknown utility law {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub a: Interval,
    pub x0: Interval,
    pub u0: Interval,
    pub u_inf: Interval,
    pub b: Interval,
    pub delta: Interval,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            a: Interval::new(0.0, 2.0),
            x0: Interval::new(0.0, 1.0),
            u0: Interval::new(0.0, 1.0),
            u_inf: Interval::new(0.0, 1.0),
            b: Interval::new(0.0, 2.0),
            delta: Interval::new(0.0, 1.0),
        }
    }
}

/// Starting values. `x0` defaults to the first estimated prevalence value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub a: f64,
    pub x0: Option<f64>,
    pub u0: f64,
    pub u_inf: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for InitialGuess {
    fn default() -> Self {
        Self {
            a: 1.0,
            x0: None,
            u0: 0.51,
            u_inf: 0.49,
            b: 1.0,
            delta: 0.9985,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tol: f64,
    pub max_itn: usize,
    pub bounds: Bounds,
    pub initial: InitialGuess,
    pub inner: LmConfig,
    pub integrator: IntegratorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_itn: 150,
            bounds: Bounds::default(),
            initial: InitialGuess::default(),
            inner: LmConfig::default(),
            integrator: IntegratorConfig::fitting(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_itn == 0 {
            return Err(Error::InvalidArgument("tol must be > 0 and max_itn >= 1".into()));
        }
        let b = &self.bounds;
        for (name, iv) in [
            ("a", b.a),
            ("x0", b.x0),
            ("u0", b.u0),
            ("u_inf", b.u_inf),
            ("b", b.b),
            ("delta", b.delta),
        ] {
            if !(iv.lo <= iv.hi) {
                return Err(Error::InvalidArgument(format!("bounds for {name} are not ordered")));
            }
        }
        let g = &self.initial;
        let inside = b.a.contains(g.a)
            && b.u0.contains(g.u0)
            && b.u_inf.contains(g.u_inf)
            && b.b.contains(g.b)
            && b.delta.contains(g.delta)
            && g.x0.is_none_or(|x| b.x0.contains(x));
        if !inside {
            return Err(Error::InvalidArgument("initial guess outside bounds".into()));
        }
        self.integrator.validate()
    }

    fn delta_coord_bounds(&self) -> (f64, f64) {
        let d = self.bounds.delta;
        (
            to_delta_coord(d.hi.min(1.0 - MIN_DELTA_GAP)),
            to_delta_coord(d.lo),
        )
    }
}

fn to_delta_coord(delta: f64) -> f64 {
    (1.0 - delta).max(MIN_DELTA_GAP).ln()
}

fn from_delta_coord(theta: f64) -> f64 {
    1.0 - theta.exp()
}

/// Model minus estimate at every year of the estimated record.
pub fn residuals(
    local: &CountryParams,
    universal: &UniversalParams,
    utility: &UtilityModel,
    data: &EstimatedPrevalence,
    config: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let Some(t0) = data.first_time() else {
        return Err(Error::InvalidArgument(format!(
            "country {} has no estimated prevalence",
            data.country_id
        )));
    };
    let params = CountryParams { t0, ..*local };
    let traj = integrate(&params, universal, utility, &data.times, config)?;
    Ok(traj
        .values
        .iter()
        .zip(&data.values)
        .map(|(m, x)| m - x)
        .collect())
}

/// Sum of squared residuals for one country.
pub fn country_error(
    law: UtilityLaw,
    local: &CountryParams,
    universal: &UniversalParams,
    articles: &Arc<ArticleSeries>,
    data: &EstimatedPrevalence,
    config: &IntegratorConfig,
) -> Result<f64> {
    let u = law.model(local, universal, articles);
    Ok(residuals(local, universal, &u, data, config)?
        .iter()
        .map(|r| r * r)
        .sum())
}

fn with_country<T>(id: u32, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Fit {
        country: id.to_string(),
        source: Box::new(e),
    })
}

/// Layout of the local parameter vector for a given law.
struct LocalLayout {
    law: UtilityLaw,
    t0: f64,
    t_window: Interval,
}

impl LocalLayout {
    fn new(law: UtilityLaw, data: &EstimatedPrevalence) -> Self {
        let t0 = data.times.first().copied().unwrap_or(0.0);
        let t1 = data.times.last().copied().unwrap_or(t0);
        Self {
            law,
            t0,
            t_window: Interval::new(t0, t1),
        }
    }

    fn pack(&self, p: &CountryParams) -> Vec<f64> {
        match self.law {
            UtilityLaw::Discounted => vec![p.x0, p.a, p.u0, p.u_inf],
            UtilityLaw::Constant => vec![p.x0, p.a, p.u0],
            UtilityLaw::Step => vec![
                p.x0,
                p.a,
                p.u0,
                p.u_inf,
                p.t_star.unwrap_or(0.5 * (self.t_window.lo + self.t_window.hi)),
            ],
        }
    }

    fn unpack(&self, v: &[f64]) -> CountryParams {
        let mut p = CountryParams::new(v[1], v[0], v[2], v[2], self.t0);
        if self.law != UtilityLaw::Constant {
            p.u_inf = v[3];
        }
        if self.law == UtilityLaw::Step {
            p.t_star = Some(v[4]);
        }
        p
    }

    fn bounds(&self, b: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![b.x0.lo, b.a.lo, b.u0.lo];
        let mut hi = vec![b.x0.hi, b.a.hi, b.u0.hi];
        if self.law != UtilityLaw::Constant {
            lo.push(b.u_inf.lo);
            hi.push(b.u_inf.hi);
        }
        if self.law == UtilityLaw::Step {
            lo.push(self.t_window.lo);
            hi.push(self.t_window.hi);
        }
        (lo, hi)
    }
}

/// Outcome of one local or universal solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport<P> {
    pub params: P,
    pub error: f64,
    pub status: LmStatus,
}

/// Starting local parameters for a country under `law`.
pub fn initial_local(
    law: UtilityLaw,
    data: &EstimatedPrevalence,
    universal: &UniversalParams,
    articles: &Arc<ArticleSeries>,
    config: &FitConfig,
) -> Result<CountryParams> {
    let g = &config.initial;
    let t0 = data.first_time().ok_or_else(|| {
        Error::InvalidArgument(format!("country {} has no estimated prevalence", data.country_id))
    })?;
    let x0 = g
        .x0
        .unwrap_or(data.values[0])
        .clamp(config.bounds.x0.lo, config.bounds.x0.hi);
    let (u0, u_inf) = match law {
        UtilityLaw::Constant => {
            let u = 0.5 * (g.u0 + g.u_inf);
            (u, u)
        }
        _ => (g.u0, g.u_inf),
    };
    let mut p = CountryParams::new(g.a, x0, u0, u_inf, t0);
    if law == UtilityLaw::Step {
        // The step objective is multimodal in t_star; start from the best
        // switch year on a coarse grid.
        let (lo, hi) = (t0, *data.times.last().unwrap_or(&t0));
        let mut best = (f64::INFINITY, 0.5 * (lo + hi));
        let mut ts = lo;
        while ts <= hi {
            let cand = CountryParams {
                t_star: Some(ts),
                ..p
            };
            if let Ok(e) = country_error(law, &cand, universal, articles, data, &config.integrator) {
                if e < best.0 {
                    best = (e, ts);
                }
            }
            ts += 5.0;
        }
        p.t_star = Some(best.1);
    }
    Ok(p)
}

/// Refits one country's local parameters with the universal ones fixed.
pub fn fit_local(
    law: UtilityLaw,
    data: &EstimatedPrevalence,
    start: &CountryParams,
    universal: &UniversalParams,
    articles: &Arc<ArticleSeries>,
    config: &FitConfig,
) -> Result<SolveReport<CountryParams>> {
    let layout = LocalLayout::new(law, data);
    let (lo, hi) = layout.bounds(&config.bounds);
    let objective = |v: &[f64]| {
        let p = layout.unpack(v);
        let u = law.model(&p, universal, articles);
        residuals(&p, universal, &u, data, &config.integrator)
    };
    let out = with_country(
        data.country_id,
        minimize(objective, &layout.pack(start), &lo, &hi, &config.inner),
    )?;
    if !out.status.converged() {
        warn!(
            "country {}: local solve stopped with {:?}",
            data.country_id, out.status
        );
    }
    Ok(SolveReport {
        params: layout.unpack(&out.params),
        error: out.cost,
        status: out.status,
    })
}

/// Refits the universal parameters with all local parameters fixed.
pub fn fit_universal(
    law: UtilityLaw,
    data: &[EstimatedPrevalence],
    locals: &BTreeMap<u32, CountryParams>,
    start: &UniversalParams,
    articles: &Arc<ArticleSeries>,
    config: &FitConfig,
) -> Result<SolveReport<UniversalParams>> {
    let fits_delta = law.fits_delta();
    let unpack = |v: &[f64]| UniversalParams {
        b: v[0],
        delta: if fits_delta { from_delta_coord(v[1]) } else { start.delta },
    };
    let concatenated = |uni: &UniversalParams| -> Result<Vec<f64>> {
        let mut all = Vec::new();
        for d in data {
            let local = &locals[&d.country_id];
            let u = law.model(local, uni, articles);
            all.extend(with_country(
                d.country_id,
                residuals(local, uni, &u, d, &config.integrator),
            )?);
        }
        Ok(all)
    };
    let objective = |v: &[f64]| concatenated(&unpack(v));
    let objective_at = |uni: &UniversalParams| -> Result<f64> {
        Ok(concatenated(uni)?.iter().map(|r| r * r).sum())
    };
    let (mut lo, mut hi) = (vec![config.bounds.b.lo], vec![config.bounds.b.hi]);
    let mut x0 = vec![start.b];
    if fits_delta {
        let (tlo, thi) = config.delta_coord_bounds();
        lo.push(tlo);
        hi.push(thi);
        x0.push(to_delta_coord(start.delta).clamp(tlo, thi));
    }
    let out = minimize(objective, &x0, &lo, &hi, &config.inner)?;
    // The delta transform does not round-trip exactly, so the solver's
    // starting point can differ from `start` in the last bits. Keep `start`
    // unless the solve actually improved on it.
    let start_error: f64 = objective_at(start)?;
    if out.cost >= start_error {
        return Ok(SolveReport {
            params: *start,
            error: start_error,
            status: out.status,
        });
    }
    if !out.status.converged() {
        warn!("universal solve stopped with {:?}", out.status);
    }
    Ok(SolveReport {
        params: unpack(&out.params),
        error: out.cost,
        status: out.status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Total error after the local phase.
    pub error_after_local: f64,
    /// Total error after the universal phase.
    pub total_error: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub law: UtilityLaw,
    pub universal: UniversalParams,
    pub locals: BTreeMap<u32, CountryParams>,
    pub per_country_error: BTreeMap<u32, f64>,
    pub total_error: f64,
    pub initial_error: f64,
    pub outer_iterations: usize,
    pub converged_by: Termination,
    pub log: Vec<IterationRecord>,
    /// True when the total error never increased between phases.
    pub monotone: bool,
    /// Human-readable notes (inner-solver trouble, `u0 < u_inf`, ...).
    pub notes: Vec<String>,
}

/// Alternating calibration over the given (gated) countries.
pub fn alternate_fit(
    data: &[EstimatedPrevalence],
    law: UtilityLaw,
    articles: &Arc<ArticleSeries>,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no countries to fit".into()));
    }
    let mut data: Vec<EstimatedPrevalence> = data.to_vec();
    data.sort_by_key(|d| d.country_id);
    if data.windows(2).any(|w| w[0].country_id == w[1].country_id) {
        return Err(Error::InvalidArgument("duplicate country in fit data".into()));
    }

    let mut universal = UniversalParams::new(config.initial.b, config.initial.delta);
    let mut locals = BTreeMap::new();
    for d in &data {
        let p = with_country(d.country_id, initial_local(law, d, &universal, articles, config))?;
        locals.insert(d.country_id, p);
    }
    let total = |locals: &BTreeMap<u32, CountryParams>, uni: &UniversalParams| -> Result<BTreeMap<u32, f64>> {
        data.par_iter()
            .map(|d| {
                let e = with_country(
                    d.country_id,
                    country_error(law, &locals[&d.country_id], uni, articles, d, &config.integrator),
                )?;
                Ok((d.country_id, e))
            })
            .collect()
    };
    let initial_error: f64 = total(&locals, &universal)?.values().sum();
    let mut prev = initial_error;
    let mut log = Vec::new();
    let mut notes = Vec::new();
    let mut monotone = true;
    let mut converged_by = Termination::MaxIterations;
    let mut outer = 0;

    for itn in 1..=config.max_itn {
        outer = itn;
        let uni = universal;
        let reports: Vec<SolveReport<CountryParams>> = data
            .par_iter()
            .map(|d| fit_local(law, d, &locals[&d.country_id], &uni, articles, config))
            .collect::<Result<_>>()?;
        for (d, r) in data.iter().zip(&reports) {
            if !r.status.converged() && itn == 1 {
                notes.push(format!("country {}: local solve {:?}", d.country_id, r.status));
            }
            locals.insert(d.country_id, r.params);
        }
        let after_local: f64 = reports.iter().map(|r| r.error).sum();

        let ur = fit_universal(law, &data, &locals, &universal, articles, config)?;
        universal = ur.params;
        let e = ur.error;

        if after_local > prev || e > after_local {
            monotone = false;
            warn!("iteration {itn}: objective increased ({prev} -> {after_local} -> {e})");
        }
        debug!("iteration {itn}: E = {e:.9} b = {:.5} delta = {:.6}", universal.b, universal.delta);
        log.push(IterationRecord {
            iteration: itn,
            error_after_local: after_local,
            total_error: e,
            b: universal.b,
            delta: universal.delta,
        });
        let change = (prev - e).abs();
        prev = e;
        if change < config.tol {
            converged_by = Termination::Tolerance;
            break;
        }
    }

    let per_country_error = total(&locals, &universal)?;
    let total_error = per_country_error.values().sum();
    for (id, p) in &locals {
        if law != UtilityLaw::Constant && p.u0 < p.u_inf {
            notes.push(format!("country {id}: u0 < u_inf ({:.4} < {:.4})", p.u0, p.u_inf));
        }
    }
    Ok(FitResult {
        law,
        universal,
        locals,
        per_country_error,
        total_error,
        initial_error,
        outer_iterations: outer,
        converged_by,
        log,
        monotone,
        notes,
    })
}

/// Repeats [`alternate_fit`] from perturbed starting points and keeps the
/// lowest total error. The first start is always the configured guess.
pub fn multi_start_fit(
    data: &[EstimatedPrevalence],
    law: UtilityLaw,
    articles: &Arc<ArticleSeries>,
    config: &FitConfig,
    starts: usize,
    seed: u64,
) -> Result<FitResult> {
    let mut best = alternate_fit(data, law, articles, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bd = config.bounds;
    for _ in 1..starts.max(1) {
        let mut cfg = *config;
        let g = &mut cfg.initial;
        g.a = (g.a + rng.gen_range(-0.15..0.15)).clamp(bd.a.lo, bd.a.hi);
        g.b = (g.b * rng.gen_range(0.5..1.5)).clamp(bd.b.lo, bd.b.hi);
        g.u0 = (g.u0 + rng.gen_range(0.0..0.05)).clamp(bd.u0.lo, bd.u0.hi);
        g.u_inf = (g.u_inf - rng.gen_range(0.0..0.05)).clamp(bd.u_inf.lo, bd.u_inf.hi);
        let gap = (1.0 - g.delta) * 10f64.powf(rng.gen_range(-0.5..0.5));
        g.delta = (1.0 - gap).clamp(bd.delta.lo, bd.delta.hi);
        match alternate_fit(data, law, articles, &cfg) {
            Ok(r) if r.total_error < best.total_error => best = r,
            Ok(_) => {}
            Err(e) => warn!("multi-start run failed: {e}"),
        }
    }
    Ok(best)
}


/// One row of a fit table.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    /// Country abbreviation (or numeric id when no metadata is available).
    pub country: String,
    pub params: CountryParams,
    pub error: Option<f64>,
}

/// A fit table: one universal row followed by per-country rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTable {
    pub universal: Option<UniversalParams>,
    pub total_error: Option<f64>,
    pub rows: Vec<FitRow>,
}

impl FitTable {
    pub fn from_result(fit: &FitResult, label: impl Fn(u32) -> String) -> Self {
        Self {
            universal: Some(fit.universal),
            total_error: Some(fit.total_error),
            rows: fit
                .locals
                .iter()
                .map(|(id, p)| FitRow {
                    country: label(*id),
                    params: *p,
                    error: fit.per_country_error.get(id).copied(),
                })
                .collect(),
        }
    }

    pub fn row(&self, country: &str) -> Option<&FitRow> {
        self.rows.iter().find(|r| r.country.eq_ignore_ascii_case(country))
    }
}

pub const FIT_TABLE_HEADER: [&str; 9] = ["country", "b", "delta", "a", "x0", "u0", "u_inf", "t_star", "E"];
/// Label of the universal row.
pub const UNIVERSAL_ROW: &str = "ALL";

/// Writes a fit as CSV: header, universal row, then one row per country in
/// id order. `label` maps country ids to the name written in the first column.
pub fn write_fit_table<W: std::io::Write>(
    out: W,
    fit: &FitResult,
    label: impl Fn(u32) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_TABLE_HEADER)?;
    w.write_record([
        UNIVERSAL_ROW.to_string(),
        format!("{:.6}", fit.universal.b),
        format!("{:.8}", fit.universal.delta),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        format!("{:.6}", fit.total_error),
    ])?;
    for (id, p) in &fit.locals {
        w.write_record([
            label(*id),
            String::new(),
            String::new(),
            format!("{:.6}", p.a),
            format!("{:.6}", p.x0),
            format!("{:.6}", p.u0),
            format!("{:.6}", p.u_inf),
            p.t_star.map(|t| format!("{t:.3}")).unwrap_or_default(),
            format!("{:.6}", fit.per_country_error[id]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a fit table by column name; `t_star` and `E` columns are optional.
/// The `t0` of each row is left at zero.
pub fn parse_fit_table<R: std::io::Read>(input: R) -> Result<FitTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column {name}"),
        })
    };
    let (c_country, c_b, c_delta) = (required("country")?, required("b")?, required("delta")?);
    let (c_a, c_x0, c_u0, c_uinf) = (required("a")?, required("x0")?, required("u0")?, required("u_inf")?);
    let (c_tstar, c_e) = (col("t_star"), col("E"));

    let mut table = FitTable {
        universal: None,
        total_error: None,
        rows: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |idx: Option<usize>| -> Result<Option<f64>> {
            match idx.and_then(|i| rec.get(i)).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| Error::Parse {
                    line,
                    msg: format!("cannot parse number from {s:?}"),
                }),
            }
        };
        let need = |idx: usize, name: &str| -> Result<f64> {
            num(Some(idx))?.ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing {name}"),
            })
        };
        let country = rec.get(c_country).unwrap_or("").to_string();
        if country == UNIVERSAL_ROW {
            table.universal = Some(UniversalParams::new(need(c_b, "b")?, need(c_delta, "delta")?));
            table.total_error = num(c_e)?;
        } else {
            let mut params = CountryParams::new(
                need(c_a, "a")?,
                need(c_x0, "x0")?,
                need(c_u0, "u0")?,
                need(c_uinf, "u_inf")?,
                0.0,
            );
            params.t_star = num(c_tstar)?;
            table.rows.push(FitRow {
                country,
                params,
                error: num(c_e)?,
            });
        }
    }
    Ok(table)
}
