use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn contagion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contagion"))
        .args(args)
        .env_remove("CONTAGION_FIT_DATA")
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let out = contagion(&["synth", "--out-dir", path(dir), "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn tables_only_analysis_writes_correlations() {
    let tmp = TempDir::new().unwrap();
    let out = contagion(&["analyze", "--tables-only", "--out-dir", path(tmp.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("correlations.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    for f in ["peak_years.csv", "idv_a.svg", "a_tmax.svg", "idv_tmax.svg"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let peaks = fs::read_to_string(tmp.path().join("peak_years.csv")).unwrap();
    assert_eq!(peaks.lines().count(), 26);
}

#[test]
fn synth_is_reproducible_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "4");
    synth(&b, "4");
    synth(&c, "5");
    for f in ["measurements.csv", "articles.csv", "countries.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        fs::read(a.join("measurements.csv")).unwrap(),
        fs::read(c.join("measurements.csv")).unwrap()
    );
}

#[test]
fn ingest_reports_counts_for_synthetic_data() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "1");
    let out = contagion(&["ingest", "--data-dir", path(tmp.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for c in ["USA", "SWE", "FRA", "articles:"] {
        assert!(text.contains(c), "{c} missing from\n{text}");
    }
}

#[test]
fn decreasing_cumulative_count_is_rejected_with_its_line() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "1");
    let file = tmp.path().join("articles.csv");
    let mut lines: Vec<String> = fs::read_to_string(&file).unwrap().lines().map(String::from).collect();
    let fields: Vec<&str> = lines[9].split(',').collect();
    lines[9] = format!("{},{},0", fields[0], fields[1]);
    fs::write(&file, lines.join("\n") + "\n").unwrap();
    let out = contagion(&["ingest", "--data-dir", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("articles.csv") && err.contains("line 10"), "{err}");
}

#[test]
fn missing_countries_file_exits_with_code_two() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "1");
    fs::remove_file(tmp.path().join("countries.csv")).unwrap();
    let out = contagion(&["ingest", "--data-dir", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("countries.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_country_filter_is_an_error() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "1");
    let out = contagion(&["ingest", "--data-dir", path(tmp.path()), "--countries", "XYZ"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("XYZ"));
}

#[test]
fn estimate_honours_country_filter() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let res = tmp.path().join("out");
    synth(&data, "2");
    let out = contagion(&["estimate", "--data-dir", path(&data), "--out-dir", path(&res), "--countries", "USA"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(res.join("regression.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("USA,") && rows[1].contains(",true,"), "{}", rows[1]);
    assert!(res.join("xhat/USA.csv").exists());
    assert!(!res.join("xhat/SWE.csv").exists());
}

#[test]
fn country_without_prevalence_gets_a_dash_row() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let res = tmp.path().join("out");
    synth(&data, "2");
    let mut m = fs::read_to_string(data.join("measurements.csv")).unwrap();
    for y in 1950..1990 {
        m.push_str(&format!("99,{y},{},1\n", 5.0 + 0.1 * f64::from(y - 1950)));
    }
    fs::write(data.join("measurements.csv"), m).unwrap();
    let mut c = fs::read_to_string(data.join("countries.csv")).unwrap();
    c.push_str("99,Nowhere,NOW,50\n");
    fs::write(data.join("countries.csv"), c).unwrap();

    let out = contagion(&["estimate", "--data-dir", path(&data), "--out-dir", path(&res)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(res.join("regression.csv")).unwrap();
    let row = text.lines().find(|l| l.starts_with("NOW,")).unwrap();
    assert_eq!(row, "NOW,-,-,-,-,-,-,-,false,-,-");
    assert!(!res.join("xhat/NOW.csv").exists());
}

#[test]
fn single_country_correlation_study_fails() {
    let tmp = TempDir::new().unwrap();
    let out = contagion(&["analyze", "--tables-only", "--out-dir", path(tmp.path()), "--countries", "USA"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn zero_initial_prevalence_stays_zero() {
    let tmp = TempDir::new().unwrap();
    let out = contagion(&[
        "simulate", "--out-dir", path(tmp.path()), "--a", "1.05", "--x0", "0", "--u0", "0.55", "--u-inf", "0.48",
        "--b", "1", "--delta", "0.998",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("simulate_custom.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 91);
    for r in rows {
        let x: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(x, 0.0, "{r}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let res = tmp.path().join("out");
    synth(&data, "3");
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        format!("# run\ndata_dir = {}\nout_dir = {}\ncountries = SWE\n", path(&data), path(&res)),
    )
    .unwrap();

    let out = contagion(&["estimate", "--config", path(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(res.join("regression.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("SWE,"));

    let out = contagion(&["estimate", "--config", path(&cfg), "--countries", "USA,CAN"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(res.join("regression.csv")).unwrap();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names.len(), 2);
    assert!(names.contains(&"USA") && names.contains(&"CAN"), "{names:?}");
}

#[test]
fn malformed_config_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "seed = 2\nthis line has no equals sign\n").unwrap();
    let out = contagion(&["ingest", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}
