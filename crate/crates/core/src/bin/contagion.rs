use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contagion::calibrate::UtilityLaw;
use contagion::cli::{self, AnalyzeArgs, ParamSource, SimulateArgs, SynthArgs};
use contagion::config::RunConfig;
use contagion::model::{CountryParams, UniversalParams};
use contagion::Result;

#[derive(Parser)]
#[command(name = "contagion", version, about = "Fit and analyse a social-contagion model of smoking prevalence")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Directory holding measurements.csv, articles.csv and countries.csv.
    #[arg(long, global = true, env = "CONTAGION_FIT_DATA")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated country abbreviations.
    #[arg(long, global = true)]
    countries: Option<String>,
    #[arg(long, global = true)]
    utility: Option<UtilityLaw>,
    /// Countries whose prevalence points get a Grubbs screen (default FRA).
    #[arg(long, global = true)]
    screen_outliers: Option<String>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_itn: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file; flags take precedence over its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the input files and print observation counts.
    Ingest,
    /// Regress prevalence on consumption and write estimated prevalence.
    Estimate,
    /// Calibrate the model on the countries that pass the regression gate.
    Fit,
    /// Simulate one parameter set.
    Simulate(SimulateCmd),
    /// Correlation study of conformity, individualism and peak years.
    Analyze(AnalyzeCmd),
    /// Generate a synthetic dataset with known parameters.
    Synth(SynthCmd),
}

#[derive(Args)]
struct SimulateCmd {
    /// Country to take from the fit table (defaults to the bundled reference fit).
    #[arg(long, default_value = "USA")]
    country: String,
    /// Fit table written by `fit`.
    #[arg(long)]
    fit_table: Option<PathBuf>,
    #[arg(long, requires_all = ["x0", "u0", "u_inf", "b"])]
    a: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    u0: Option<f64>,
    #[arg(long)]
    u_inf: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    t_star: Option<f64>,
    #[arg(long, default_value_t = 1920.0)]
    from: f64,
    #[arg(long, default_value_t = 2010.0)]
    to: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
}

#[derive(Args)]
struct AnalyzeCmd {
    /// Use only the bundled tables; no data files are read.
    #[arg(long)]
    tables_only: bool,
    /// Use an existing fit table instead of fitting.
    #[arg(long)]
    fit_table: Option<PathBuf>,
    /// Also fit every utility law and report the total errors.
    #[arg(long)]
    compare_laws: bool,
}

#[derive(Args)]
struct SynthCmd {
    /// Noise standard deviation in prevalence units.
    #[arg(long)]
    sigma: Option<f64>,
    /// One recovery-test country instead of seven.
    #[arg(long)]
    single: bool,
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &c.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &c.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(v) = &c.countries {
        cfg.set("countries", v)?;
    }
    if let Some(v) = &c.screen_outliers {
        cfg.set("screen_outliers", v)?;
    }
    if let Some(u) = c.utility {
        cfg.utility = u;
    }
    if let Some(t) = c.tol {
        cfg.fit.tol = t;
    }
    if let Some(n) = c.max_itn {
        cfg.fit.max_itn = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = run_config(&cli.common)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ingest => cli::ingest(&cfg, &mut out)?,
        Command::Estimate => {
            cli::estimate(&cfg, &mut out)?;
        }
        Command::Fit => {
            cli::fit(&cfg, &mut out)?;
        }
        Command::Simulate(s) => {
            let source = match (s.a, s.x0, s.u0, s.u_inf, s.b) {
                (Some(a), Some(x0), Some(u0), Some(u_inf), Some(b)) => {
                    let mut local = CountryParams::new(a, x0, u0, u_inf, s.from);
                    local.t_star = s.t_star;
                    ParamSource::Explicit {
                        local,
                        universal: UniversalParams::new(b, s.delta),
                    }
                }
                _ => ParamSource::FitTable {
                    path: s.fit_table,
                    country: s.country,
                },
            };
            let args = SimulateArgs {
                source,
                from: s.from,
                to: s.to,
                step: s.step,
            };
            cli::simulate(&cfg, &args, &mut out)?;
        }
        Command::Analyze(a) => {
            let args = AnalyzeArgs {
                tables_only: a.tables_only,
                fit_table: a.fit_table,
                compare_laws: a.compare_laws,
            };
            cli::analyze(&cfg, &args, &mut out)?;
        }
        Command::Synth(s) => {
            if let Some(sigma) = s.sigma {
                cfg.sigma = sigma;
            }
            cli::synth(&cfg, &SynthArgs { single: s.single }, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
